use nalgebra::DVector;

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::linalg::SpdFactor;
use crate::solvers::kkt::kkt_residual_raw;

/// Coefficients with magnitude at or below this are outside the support.
pub const SUPPORT_THRESHOLD: f64 = 1e-12;

/// Active-set passes between full sweeps.
const ACTIVE_PASSES: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LassoOptions {
    /// Convergence threshold on the largest coefficient change in a full sweep.
    pub tol: f64,
    /// Sweep budget; `None` means `100 * p`.
    pub max_iter: Option<usize>,
}

impl Default for LassoOptions {
    fn default() -> Self {
        Self {
            tol: 1e-7,
            max_iter: None,
        }
    }
}

impl LassoOptions {
    pub fn with_tol(tol: f64) -> Self {
        Self {
            tol,
            ..Self::default()
        }
    }

    fn sweeps(&self, p: usize) -> usize {
        self.max_iter.unwrap_or(100 * p).max(1)
    }
}

/// A lasso solution with its signed support.
#[derive(Debug, Clone, PartialEq)]
pub struct LassoFit {
    pub beta: DVector<f64>,
    pub lambda: f64,
    /// Active coefficient indices, increasing.
    pub support: Vec<usize>,
    /// Sign of each active coefficient, aligned with `support`.
    pub signs: Vec<f64>,
    pub objective: f64,
}

impl LassoFit {
    pub fn from_beta(data: &Dataset, beta: DVector<f64>, lambda: f64) -> Self {
        let support: Vec<usize> = (0..beta.len())
            .filter(|&j| beta[j].abs() > SUPPORT_THRESHOLD)
            .collect();
        let signs = support.iter().map(|&j| beta[j].signum()).collect();
        let objective = lasso_objective(data, &beta, lambda);
        Self {
            beta,
            lambda,
            support,
            signs,
            objective,
        }
    }
}

pub fn soft_threshold(z: f64, t: f64) -> f64 {
    if z > t {
        z - t
    } else if z < -t {
        z + t
    } else {
        0.0
    }
}

/// `0.5 * ||Y - X beta||^2 + lambda * ||beta||_1`
pub fn lasso_objective(data: &Dataset, beta: &DVector<f64>, lambda: f64) -> f64 {
    let r = data.y() - data.x() * beta;
    0.5 * r.norm_squared() + lambda * beta.lp_norm(1)
}

/// Cyclic coordinate descent state for one lasso problem.
///
/// Keeps the residual `Y - X beta` up to date so each coordinate update costs
/// one column pass.
pub struct CoordinateDescent<'a> {
    data: &'a Dataset,
    lambda: f64,
    beta: DVector<f64>,
    resid: DVector<f64>,
    col_sq: Vec<f64>,
}

impl<'a> CoordinateDescent<'a> {
    pub fn new(data: &'a Dataset, lambda: f64, warm: Option<&DVector<f64>>) -> Result<Self> {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::Input(format!(
                "lasso penalty must be >= 0, got {lambda}"
            )));
        }
        let p = data.p();
        let beta = match warm {
            Some(b) if b.len() == p => b.clone(),
            Some(b) => {
                return Err(Error::Input(format!(
                    "warm start has length {}, expected {p}",
                    b.len()
                )))
            }
            None => DVector::zeros(p),
        };
        let resid = data.y() - data.x() * &beta;
        let col_sq = data.x().column_iter().map(|c| c.norm_squared()).collect();
        Ok(Self {
            data,
            lambda,
            beta,
            resid,
            col_sq,
        })
    }

    fn update(&mut self, j: usize) -> f64 {
        let sq = self.col_sq[j];
        let old = self.beta[j];
        if sq == 0.0 {
            self.beta[j] = 0.0;
            return old.abs();
        }
        let col = self.data.x().column(j);
        let z = col.dot(&self.resid) + sq * old;
        let new = soft_threshold(z, self.lambda) / sq;
        let delta = new - old;
        if delta != 0.0 {
            self.resid.axpy(-delta, &col, 1.0);
            self.beta[j] = new;
        }
        delta.abs()
    }

    /// One pass over every coordinate; returns the largest coefficient change.
    pub fn sweep(&mut self) -> f64 {
        (0..self.beta.len()).fold(0.0, |m, j| m.max(self.update(j)))
    }

    /// One pass over the currently nonzero coordinates only.
    pub fn active_sweep(&mut self) -> f64 {
        let mut max = 0.0f64;
        for j in 0..self.beta.len() {
            if self.beta[j] != 0.0 {
                max = max.max(self.update(j));
            }
        }
        max
    }

    pub fn beta(&self) -> &DVector<f64> {
        &self.beta
    }

    pub fn objective(&self) -> f64 {
        0.5 * self.resid.norm_squared() + self.lambda * self.beta.lp_norm(1)
    }

    fn support(&self) -> Vec<usize> {
        (0..self.beta.len())
            .filter(|&j| self.beta[j].abs() > SUPPORT_THRESHOLD)
            .collect()
    }

    /// Replaces the iterate with the closed-form solution for the current
    /// signed support when that solution keeps its signs and meets the
    /// stationarity conditions to `tol`.
    fn polish(&mut self, tol: f64) -> bool {
        let support = self.support();
        if support.is_empty() || support.len() > self.data.n() {
            return false;
        }
        let xm = self.data.x().select_columns(&support);
        let Ok(factor) = SpdFactor::new(xm.tr_mul(&xm)) else {
            return false;
        };
        let signs = DVector::from_iterator(
            support.len(),
            support.iter().map(|&j| self.beta[j].signum()),
        );
        let rhs = xm.tr_mul(self.data.y()) - &signs * self.lambda;
        let bm = factor.solve_vec(&rhs);
        if bm
            .iter()
            .zip(signs.iter())
            .any(|(b, s)| b * s <= SUPPORT_THRESHOLD)
        {
            return false;
        }
        let mut beta = DVector::zeros(self.beta.len());
        for (k, &j) in support.iter().enumerate() {
            beta[j] = bm[k];
        }
        let resid = self.data.y() - self.data.x() * &beta;
        if kkt_residual_raw(self.data, &beta, &resid, self.lambda) > tol {
            return false;
        }
        self.beta = beta;
        self.resid = resid;
        true
    }

    fn stationary(&self, tol: f64) -> bool {
        kkt_residual_raw(self.data, &self.beta, &self.resid, self.lambda) <= tol
    }

    /// Runs until a full sweep moves no coefficient by more than `tol` and
    /// the stationarity conditions hold to `tol`.
    ///
    /// Between full sweeps the solver iterates on the active coordinates,
    /// at most `ACTIVE_PASSES` times.
    /// Every sweep, full or active, counts toward the budget. Once a full
    /// sweep leaves the support unchanged, the closed-form solution on that
    /// support is tried and accepted if it is stationary.
    pub fn solve(mut self, opts: &LassoOptions) -> Result<LassoFit> {
        if opts.tol.is_nan() || opts.tol <= 0.0 {
            return Err(Error::Input(format!(
                "tolerance must be positive, got {}",
                opts.tol
            )));
        }
        let budget = opts.sweeps(self.beta.len());
        let mut used = 0;
        let mut last = f64::INFINITY;
        let mut prev_support: Option<Vec<usize>> = None;
        while used < budget {
            last = self.sweep();
            used += 1;
            let support = self.support();
            let settled = prev_support.as_ref() == Some(&support);
            if (last <= opts.tol && self.stationary(opts.tol)) || (settled && self.polish(opts.tol))
            {
                return Ok(LassoFit::from_beta(self.data, self.beta, self.lambda));
            }
            prev_support = Some(support);
            let stop = budget.min(used + ACTIVE_PASSES);
            while used < stop {
                let change = self.active_sweep();
                used += 1;
                if change <= opts.tol {
                    break;
                }
            }
        }
        Err(Error::Convergence {
            iterations: used,
            last_change: last,
            beta: self.beta.iter().copied().collect(),
        })
    }
}

/// Lasso fit from a zero start.
pub fn lasso_fit(data: &Dataset, lambda: f64, opts: &LassoOptions) -> Result<LassoFit> {
    CoordinateDescent::new(data, lambda, None)?.solve(opts)
}

/// Lasso fit started from `warm`.
pub fn lasso_fit_warm(
    data: &Dataset,
    lambda: f64,
    opts: &LassoOptions,
    warm: &DVector<f64>,
) -> Result<LassoFit> {
    CoordinateDescent::new(data, lambda, Some(warm))?.solve(opts)
}
