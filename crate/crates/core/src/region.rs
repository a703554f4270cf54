//! Signed-support regions for conformal prediction with the lasso.
//!
//! For a fixed active set `M` and sign vector `s`, the lasso solution on the
//! augmented data is affine in the candidate response `y`, and `(M, s)` stays
//! optimal on an interval of `y` cut out by linear constraints. Inside that
//! interval the `n + 1` residuals are affine in `y`, so one lasso solve
//! covers every grid point in it.

use nalgebra::{DMatrix, DVector};

use crate::conformal::CandidateGrid;
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::linalg::SpdFactor;
use crate::solvers::{kkt_check, lasso_fit, lasso_fit_warm, LassoFit, LassoOptions};

/// Constraint rows whose `y` coefficient is below this (relative to the row)
/// are treated as constant in `y`.
const FLAT_ROW: f64 = 1e-13;

/// Pieces shared by the constraint and linearization formulas.
struct ActiveAlgebra {
    xm: DMatrix<f64>,
    /// `(X_M'X_M)^{-1} X_M'`, |M| x (n+1).
    pinv: DMatrix<f64>,
    /// `(X_M'X_M)^{-1} s`
    gram_inv_s: DVector<f64>,
}

impl ActiveAlgebra {
    fn new(xfull: &DMatrix<f64>, support: &[usize], signs: &[f64]) -> Result<Self> {
        if support.len() != signs.len() {
            return Err(Error::Input("support and signs differ in length".into()));
        }
        if let Some(&j) = support.iter().find(|&&j| j >= xfull.ncols()) {
            return Err(Error::Input(format!("support index {j} out of range")));
        }
        let xm = xfull.select_columns(support);
        if support.is_empty() {
            return Ok(Self {
                pinv: DMatrix::zeros(0, xfull.nrows()),
                gram_inv_s: DVector::zeros(0),
                xm,
            });
        }
        let gram = xm.tr_mul(&xm);
        let f = SpdFactor::new(gram)?;
        let pinv = f.solve_mat(&xm.transpose());
        let gram_inv_s = f.solve_vec(&DVector::from_column_slice(signs));
        Ok(Self {
            xm,
            pinv,
            gram_inv_s,
        })
    }
}

fn inactive_columns(p: usize, support: &[usize]) -> Vec<usize> {
    let mut mark = vec![false; p];
    for &j in support {
        mark[j] = true;
    }
    (0..p).filter(|&j| !mark[j]).collect()
}

/// Linear constraints `A [Y; y] <= b` under which `(M, s)` is the signed
/// support of the lasso on the augmented data.
///
/// Rows are ordered as: upper correlation bounds for each inactive feature,
/// lower correlation bounds for each inactive feature, then one sign
/// condition per active feature.
pub fn build_constraints(
    xfull: &DMatrix<f64>,
    support: &[usize],
    signs: &[f64],
    lambda: f64,
) -> Result<(DMatrix<f64>, DVector<f64>)> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::Input(format!(
            "region constraints need lambda > 0, got {lambda}"
        )));
    }
    let alg = ActiveAlgebra::new(xfull, support, signs)?;
    let inactive = inactive_columns(xfull.ncols(), support);
    let xi = xfull.select_columns(&inactive);
    let (rows, m, k) = (xfull.nrows(), inactive.len(), support.len());

    // X_{-M}'(I - P_M) and X_{-M}'(X_M')^+ s
    let (proj, corr) = if k == 0 {
        (xi.transpose(), DVector::zeros(m))
    } else {
        let cross = xi.tr_mul(&alg.xm);
        (xi.transpose() - &cross * &alg.pinv, cross * &alg.gram_inv_s)
    };

    let mut a = DMatrix::zeros(2 * m + k, rows);
    let mut b = DVector::zeros(2 * m + k);
    let inv_lambda = 1.0 / lambda;
    for r in 0..m {
        for c in 0..rows {
            a[(r, c)] = proj[(r, c)] * inv_lambda;
            a[(m + r, c)] = -proj[(r, c)] * inv_lambda;
        }
        b[r] = 1.0 - corr[r];
        b[m + r] = 1.0 + corr[r];
    }
    for (r, &s) in signs.iter().enumerate() {
        for c in 0..rows {
            a[(2 * m + r, c)] = -s * alg.pinv[(r, c)];
        }
        b[2 * m + r] = -lambda * s * alg.gram_inv_s[r];
    }
    Ok((a, b))
}

/// Interval of `y` allowed by `A [Y; y] <= b` with `Y` fixed.
///
/// Returns `(c, d)`; an unconstrained side is infinite. An empty region is
/// reported as `c > d`.
pub fn region_bounds(a: &DMatrix<f64>, b: &DVector<f64>, y: &DVector<f64>) -> (f64, f64) {
    let n = y.len();
    debug_assert_eq!(a.ncols(), n + 1);
    let mut lo = f64::NEG_INFINITY;
    let mut hi = f64::INFINITY;
    for i in 0..a.nrows() {
        let row = a.row(i);
        let coef = row[n];
        let rhs = b[i] - row.columns(0, n).transpose().dot(y);
        let scale = row.amax();
        if coef.abs() <= FLAT_ROW * scale {
            if rhs < 0.0 {
                return (f64::INFINITY, f64::NEG_INFINITY);
            }
            continue;
        }
        let bound = rhs / coef;
        if coef < 0.0 {
            lo = lo.max(bound);
        } else {
            hi = hi.min(bound);
        }
    }
    (lo, hi)
}

/// Offset and slope with `|offset - slope * y|` equal to the absolute
/// residuals of the lasso solution with signed support `(M, s)` on the data
/// augmented by candidate `y`.
pub fn residual_linearization(
    xfull: &DMatrix<f64>,
    y: &DVector<f64>,
    support: &[usize],
    signs: &[f64],
    lambda: f64,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let alg = ActiveAlgebra::new(xfull, support, signs)?;
    Ok(linearize(&alg, y, lambda))
}

fn linearize(alg: &ActiveAlgebra, y: &DVector<f64>, lambda: f64) -> (DVector<f64>, DVector<f64>) {
    let rows = alg.xm.nrows();
    let n = y.len();
    let mut offset = DVector::from_fn(rows, |i, _| if i < n { y[i] } else { 0.0 });
    let mut slope = DVector::from_fn(rows, |i, _| if i == n { -1.0 } else { 0.0 });
    if alg.xm.ncols() > 0 {
        // beta_M(y) = pinv[:, :n] Y - lambda G^{-1} s + pinv[:, n] y
        let fixed = alg.pinv.columns(0, n) * y - &alg.gram_inv_s * lambda;
        offset -= &alg.xm * fixed;
        slope += &alg.xm * alg.pinv.column(n);
    }
    (offset, slope)
}

/// Lasso coefficients for a known signed support:
/// `beta_M = X_M^+ Y - lambda (X_M'X_M)^{-1} s`, zero elsewhere.
pub fn active_set_solution(
    xfull: &DMatrix<f64>,
    yfull: &DVector<f64>,
    support: &[usize],
    signs: &[f64],
    lambda: f64,
) -> Result<DVector<f64>> {
    let alg = ActiveAlgebra::new(xfull, support, signs)?;
    let mut beta = DVector::zeros(xfull.ncols());
    if !support.is_empty() {
        let bm = &alg.pinv * yfull - &alg.gram_inv_s * lambda;
        for (k, &j) in support.iter().enumerate() {
            beta[j] = bm[k];
        }
    }
    Ok(beta)
}

/// Interval of candidate values sharing one signed support, with the
/// constraints that define it and the residual linearization valid on it.
#[derive(Debug, Clone, PartialEq)]
pub struct SupportRegion {
    pub support: Vec<usize>,
    pub signs: Vec<f64>,
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub c_bound: f64,
    pub d_bound: f64,
    pub resid_offset: DVector<f64>,
    pub resid_slope: DVector<f64>,
}

impl SupportRegion {
    pub fn build(
        xfull: &DMatrix<f64>,
        y: &DVector<f64>,
        support: &[usize],
        signs: &[f64],
        lambda: f64,
    ) -> Result<Self> {
        let (a, b) = build_constraints(xfull, support, signs, lambda)?;
        let alg = ActiveAlgebra::new(xfull, support, signs)?;
        let (c_bound, d_bound) = region_bounds(&a, &b, y);
        let (resid_offset, resid_slope) = linearize(&alg, y, lambda);
        Ok(Self {
            support: support.to_vec(),
            signs: signs.to_vec(),
            a,
            b,
            c_bound,
            d_bound,
            resid_offset,
            resid_slope,
        })
    }

    pub fn from_fit(xfull: &DMatrix<f64>, y: &DVector<f64>, fit: &LassoFit) -> Result<Self> {
        Self::build(xfull, y, &fit.support, &fit.signs, fit.lambda)
    }

    pub fn is_empty(&self) -> bool {
        self.c_bound > self.d_bound
    }

    /// Strict membership, keeping a relative distance `margin` from both bounds.
    pub fn interior(&self, y: f64, margin: f64) -> bool {
        let m = margin * y.abs().max(1.0);
        self.c_bound + m < y && y < self.d_bound - m
    }

    pub fn abs_residuals(&self, y: f64) -> Vec<f64> {
        self.resid_offset
            .iter()
            .zip(self.resid_slope.iter())
            .map(|(o, s)| (o - s * y).abs())
            .collect()
    }

    /// Indices of constraint rows violated at candidate `y`.
    pub fn violations(&self, y_train: &DVector<f64>, y: f64) -> Vec<usize> {
        let n = y_train.len();
        (0..self.a.nrows())
            .filter(|&i| {
                let row = self.a.row(i);
                row.columns(0, n).transpose().dot(y_train) + row[n] * y > self.b[i]
            })
            .collect()
    }

    /// Signed support after crossing constraint `row`: an inactive feature
    /// enters with the sign of the violated bound, or an active one leaves.
    pub fn crossed(&self, p: usize, row: usize) -> (Vec<usize>, Vec<f64>) {
        let inactive = inactive_columns(p, &self.support);
        let m = inactive.len();
        let mut pairs: Vec<(usize, f64)> = self
            .support
            .iter()
            .copied()
            .zip(self.signs.iter().copied())
            .collect();
        if row < m {
            pairs.push((inactive[row], 1.0));
        } else if row < 2 * m {
            pairs.push((inactive[row - m], -1.0));
        } else {
            pairs.remove(row - 2 * m);
        }
        pairs.sort_by_key(|&(j, _)| j);
        pairs.into_iter().unzip()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScanOptions {
    pub lasso: LassoOptions,
    /// Relative distance from a region bound inside which a refit is forced.
    pub boundary_margin: f64,
    /// Update the signed support directly when a single constraint breaks.
    pub single_violation_shortcut: bool,
}

impl Default for ScanOptions {
    fn default() -> Self {
        Self {
            lasso: LassoOptions::default(),
            boundary_margin: 1e-10,
            single_violation_shortcut: true,
        }
    }
}

/// Absolute lasso residuals at each candidate, with work counters.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RegionScan {
    pub points: Vec<f64>,
    /// `n + 1` absolute residuals per point; the candidate's own is last.
    pub abs_residuals: Vec<Vec<f64>>,
    /// Coordinate-descent solves.
    pub n_solver_calls: usize,
    /// Support changes handled by the single-violation update.
    pub n_shortcut_updates: usize,
    /// Points evaluated through a region linearization.
    pub n_region_evals: usize,
    /// Points where no valid region was found and residuals came from a fit.
    pub n_direct_evals: usize,
}

struct Scanner<'a> {
    data: &'a Dataset,
    x_new: DVector<f64>,
    xfull: DMatrix<f64>,
    lambda: f64,
    opts: ScanOptions,
    warm: DVector<f64>,
    region: Option<SupportRegion>,
    out: RegionScan,
}

impl<'a> Scanner<'a> {
    fn new(
        data: &'a Dataset,
        x_new: &DVector<f64>,
        lambda: f64,
        opts: ScanOptions,
    ) -> Result<Self> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::Input(format!(
                "lasso penalty must be positive, got {lambda}"
            )));
        }
        Ok(Self {
            data,
            x_new: x_new.clone(),
            xfull: data.stacked_design(x_new)?,
            lambda,
            opts,
            warm: DVector::zeros(data.p()),
            region: None,
            out: RegionScan::default(),
        })
    }

    fn usable(&self, region: SupportRegion, y: f64) -> Option<SupportRegion> {
        region
            .interior(y, self.opts.boundary_margin)
            .then_some(region)
    }

    fn region_for(&self, support: &[usize], signs: &[f64], y: f64) -> Option<SupportRegion> {
        SupportRegion::build(&self.xfull, self.data.y(), support, signs, self.lambda)
            .ok()
            .and_then(|r| self.usable(r, y))
    }

    fn shortcut(
        &self,
        prev: &SupportRegion,
        aug: &Dataset,
        y: f64,
    ) -> Option<(SupportRegion, DVector<f64>)> {
        let violated = prev.violations(self.data.y(), y);
        if violated.len() != 1 {
            return None;
        }
        let (support, signs) = prev.crossed(self.data.p(), violated[0]);
        let beta = active_set_solution(&self.xfull, aug.y(), &support, &signs, self.lambda).ok()?;
        let fit = LassoFit::from_beta(aug, beta, self.lambda);
        if fit.support != support || fit.signs != signs {
            return None;
        }
        if !kkt_check(aug, &fit, 1e-9 * self.lambda.max(1.0)) {
            return None;
        }
        let region = self.region_for(&support, &signs, y)?;
        Some((region, fit.beta))
    }

    fn step(&mut self, y: f64) -> Result<()> {
        if let Some(r) = &self.region {
            if r.interior(y, self.opts.boundary_margin) {
                self.push_region(y);
                return Ok(());
            }
        }
        let aug = self.data.augmented(&self.x_new, y)?;
        if self.opts.single_violation_shortcut {
            if let Some(prev) = &self.region {
                if let Some((region, beta)) = self.shortcut(prev, &aug, y) {
                    self.out.n_shortcut_updates += 1;
                    self.region = Some(region);
                    self.warm = beta;
                    self.push_region(y);
                    return Ok(());
                }
            }
        }
        let fit = lasso_fit_warm(&aug, self.lambda, &self.opts.lasso, &self.warm)
            .map_err(|e| Error::at(y, e))?;
        self.out.n_solver_calls += 1;
        self.warm = fit.beta.clone();
        self.region = self.region_for(&fit.support, &fit.signs, y);
        if self.region.is_some() {
            self.push_region(y);
            return Ok(());
        }
        // Boundary point or an imprecise support: solve tightly from a cold
        // start and retry before falling back to the fitted residuals.
        let tight = LassoOptions {
            tol: 1e-12,
            max_iter: Some(self.opts.lasso.max_iter.unwrap_or(100 * self.data.p()) * 10),
        };
        let fit = lasso_fit(&aug, self.lambda, &tight).map_err(|e| Error::at(y, e))?;
        self.out.n_solver_calls += 1;
        self.region = self.region_for(&fit.support, &fit.signs, y);
        if self.region.is_some() {
            self.push_region(y);
        } else {
            let r = aug.y() - aug.x() * &fit.beta;
            self.out.points.push(y);
            self.out
                .abs_residuals
                .push(r.iter().map(|v| v.abs()).collect());
            self.out.n_direct_evals += 1;
        }
        Ok(())
    }

    fn push_region(&mut self, y: f64) {
        let r = self.region.as_ref().expect("region present");
        self.out.points.push(y);
        self.out.abs_residuals.push(r.abs_residuals(y));
        self.out.n_region_evals += 1;
    }
}

/// Lasso residuals at each point, walking left to right and refitting only
/// when a point falls outside the current signed-support region.
pub fn region_scan_points(
    data: &Dataset,
    x_new: &DVector<f64>,
    lambda: f64,
    points: &[f64],
    opts: &ScanOptions,
) -> Result<RegionScan> {
    let mut scanner = Scanner::new(data, x_new, lambda, *opts)?;
    for &y in points {
        scanner.step(y)?;
    }
    Ok(scanner.out)
}

pub fn region_scan(
    data: &Dataset,
    x_new: &DVector<f64>,
    lambda: f64,
    grid: &CandidateGrid,
    opts: &ScanOptions,
) -> Result<RegionScan> {
    let points = grid.points();
    if points.is_empty() {
        return Err(Error::Input("empty candidate grid".into()));
    }
    region_scan_points(data, x_new, lambda, &points, opts)
}

/// Scans contiguous chunks of `chunk_len` points in parallel, each starting
/// from a fresh solve, and concatenates the results.
pub fn region_scan_chunked(
    data: &Dataset,
    x_new: &DVector<f64>,
    lambda: f64,
    grid: &CandidateGrid,
    opts: &ScanOptions,
    chunk_len: usize,
) -> Result<RegionScan> {
    use rayon::prelude::*;
    let points = grid.points();
    let parts: Vec<Result<RegionScan>> = points
        .par_chunks(chunk_len.max(1))
        .map(|chunk| region_scan_points(data, x_new, lambda, chunk, opts))
        .collect();
    let mut out = RegionScan::default();
    for part in parts {
        let part = part?;
        out.points.extend(part.points);
        out.abs_residuals.extend(part.abs_residuals);
        out.n_solver_calls += part.n_solver_calls;
        out.n_shortcut_updates += part.n_shortcut_updates;
        out.n_region_evals += part.n_region_evals;
        out.n_direct_evals += part.n_direct_evals;
    }
    Ok(out)
}
