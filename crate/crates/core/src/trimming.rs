//! Fast construction of the trimmed candidate range by empirical maximum,
//! closed-form ridge conformal, or split conformal with the lasso.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::conformal::{check_alpha, quantile_index, split_conformal, Interval, LassoFitter};
use crate::dataset::{check_x_new, Dataset};
use crate::error::{Error, Result};
use crate::linalg::SpdFactor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TrimMethod {
    MaxTrim,
    RidgeTrim,
    SplitTrim,
}

impl std::fmt::Display for TrimMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            TrimMethod::MaxTrim => "MaxTrim",
            TrimMethod::RidgeTrim => "RidgeTrim",
            TrimMethod::SplitTrim => "SplitTrim",
        };
        f.write_str(s)
    }
}

/// Closed interval of candidate responses kept by the trimming step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrimSet {
    pub lo: f64,
    pub hi: f64,
    pub method: TrimMethod,
    pub alpha_trim: f64,
}

impl TrimSet {
    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn interval(&self) -> Interval {
        Interval {
            lo: self.lo,
            hi: self.hi,
        }
    }

    pub fn contains(&self, y: f64) -> bool {
        self.lo <= y && y <= self.hi
    }
}

/// `[-y_max, y_max]` with `y_max = max |Y_i|`, at level `1/(n+1)`.
pub fn max_trim(data: &Dataset) -> TrimSet {
    let y_max = data.y().amax();
    TrimSet {
        lo: -y_max,
        hi: y_max,
        method: TrimMethod::MaxTrim,
        alpha_trim: 1.0 / (data.n() as f64 + 1.0),
    }
}

/// Intermediate quantities of ridge trimming. The ridge residuals on the
/// augmented data are `u + v * y` for every candidate `y`.
#[derive(Debug, Clone, PartialEq)]
pub struct RidgeTrimWork {
    pub u: DVector<f64>,
    pub v: DVector<f64>,
    /// Candidate value at which the test residual vanishes.
    pub y_star: f64,
    /// For each training index, the closed range of `y` where the test
    /// residual is no larger in magnitude than that training residual.
    /// An infinite end marks a degenerate crossing.
    pub per_i_bounds: Vec<(f64, f64)>,
}

/// Residual offset and slope of ridge regression refit on `(X, Y) + (x_new, y)`.
pub fn ridge_residual_lines(
    data: &Dataset,
    x_new: &DVector<f64>,
    rho: f64,
) -> Result<(DVector<f64>, DVector<f64>)> {
    if !(rho > 0.0 && rho.is_finite()) {
        return Err(Error::Input(format!(
            "ridge penalty must be positive, got {rho}"
        )));
    }
    let xt = data.stacked_design(x_new)?;
    let (rows, p) = xt.shape();
    let n = rows - 1;
    let y0 = DVector::from_fn(rows, |i, _| if i < n { data.y()[i] } else { 0.0 });
    let e = DVector::from_fn(rows, |i, _| if i == n { 1.0 } else { 0.0 });
    if p > rows {
        // I - H = rho (X X' + rho I)^{-1}
        let mut k: DMatrix<f64> = &xt * xt.transpose();
        for i in 0..rows {
            k[(i, i)] += rho;
        }
        let f = SpdFactor::new_unchecked(k)?;
        Ok((f.solve_vec(&y0) * rho, f.solve_vec(&e) * rho))
    } else {
        let mut g = xt.tr_mul(&xt);
        for j in 0..p {
            g[(j, j)] += rho;
        }
        let f = SpdFactor::new_unchecked(g)?;
        let u = &y0 - &xt * f.solve_vec(&xt.tr_mul(&y0));
        let v = &e - &xt * f.solve_vec(x_new);
        Ok((u, v))
    }
}

fn crossing(num: f64, den: f64, scale: f64) -> Option<f64> {
    (den.abs() > 1e-14 * scale).then(|| num / den)
}

/// Per-index bounds `(c_i, d_i)` for residual lines `u + v y`, with the
/// candidate's line last.
pub fn crossing_bounds(u: &DVector<f64>, v: &DVector<f64>) -> (f64, Vec<(f64, f64)>) {
    let t = u.len() - 1;
    let (ut, vt) = (u[t], v[t]);
    let y_star = -ut / vt;
    let scale = v.amax().max(f64::MIN_POSITIVE);
    let bounds = (0..t)
        .map(|i| {
            let a = crossing(ut - u[i], v[i] - vt, scale);
            let b = crossing(-ut - u[i], v[i] + vt, scale);
            match (a, b) {
                (Some(a), Some(b)) => (a.min(b), a.max(b)),
                (Some(r), None) | (None, Some(r)) => {
                    if r <= y_star {
                        (r, f64::INFINITY)
                    } else {
                        (f64::NEG_INFINITY, r)
                    }
                }
                (None, None) => (f64::NEG_INFINITY, f64::INFINITY),
            }
        })
        .collect();
    (y_star, bounds)
}

pub fn ridge_trim_work(data: &Dataset, x_new: &DVector<f64>, rho: f64) -> Result<RidgeTrimWork> {
    let (u, v) = ridge_residual_lines(data, x_new, rho)?;
    let (y_star, per_i_bounds) = crossing_bounds(&u, &v);
    Ok(RidgeTrimWork {
        u,
        v,
        y_star,
        per_i_bounds,
    })
}

/// Hull of the conformal set for residuals that are affine in the candidate
/// value: `y` is kept when `|u_t + v_t y|` ranks within the bottom
/// `1 - alpha` quantile of all `|u_i + v_i y|`, `t` being the last index.
///
/// The count of training residuals exceeding the test residual is piecewise
/// constant between the crossing points of the lines, so it is evaluated
/// once per segment.
pub fn linear_residual_trim(u: &DVector<f64>, v: &DVector<f64>, alpha: f64) -> Result<Interval> {
    check_alpha(alpha)?;
    if u.len() != v.len() || u.len() < 2 {
        return Err(Error::Input(
            "residual lines must have matching length >= 2".into(),
        ));
    }
    let t = u.len() - 1;
    // Accept needs rank <= q, i.e. at least m - q training residuals
    // strictly above the test residual.
    let required = u.len() - quantile_index(alpha, u.len());
    if required == 0 {
        return Err(Error::UnboundedTrimSet);
    }
    let (ut, vt) = (u[t], v[t]);
    let scale = v.amax().max(f64::MIN_POSITIVE);
    let mut breaks: Vec<f64> = (0..t)
        .flat_map(|i| {
            [
                crossing(ut - u[i], v[i] - vt, scale),
                crossing(-ut - u[i], v[i] + vt, scale),
            ]
        })
        .flatten()
        .filter(|b| b.is_finite())
        .collect();
    breaks.sort_by(f64::total_cmp);
    breaks.dedup();

    let accepts = |y: f64| {
        let test = (ut + vt * y).abs();
        (0..t).filter(|&i| (u[i] + v[i] * y).abs() > test).count() >= required
    };

    if breaks.is_empty() {
        return Err(if accepts(0.0) {
            Error::UnboundedTrimSet
        } else {
            Error::EmptyTrimSet
        });
    }
    let first = breaks[0];
    let last = *breaks.last().expect("nonempty");
    if accepts(first - 1.0 - first.abs()) || accepts(last + 1.0 + last.abs()) {
        return Err(Error::UnboundedTrimSet);
    }
    let mut hull: Option<Interval> = None;
    for w in breaks.windows(2) {
        if accepts(0.5 * (w[0] + w[1])) {
            match hull.as_mut() {
                Some(h) => h.hi = w[1],
                None => hull = Some(Interval { lo: w[0], hi: w[1] }),
            }
        }
    }
    hull.ok_or(Error::EmptyTrimSet)
}

/// Trimmed range from conformal prediction with ridge regression, in closed
/// form.
pub fn ridge_trim(
    data: &Dataset,
    x_new: &DVector<f64>,
    rho: f64,
    alpha_trim: f64,
) -> Result<TrimSet> {
    check_alpha(alpha_trim)?;
    let (u, v) = ridge_residual_lines(data, x_new, rho)?;
    let iv = linear_residual_trim(&u, &v, alpha_trim)?;
    Ok(TrimSet {
        lo: iv.lo,
        hi: iv.hi,
        method: TrimMethod::RidgeTrim,
        alpha_trim,
    })
}

/// Trimmed range from split conformal prediction with a lasso fit on the
/// rows in `split`.
pub fn split_lasso_trim(
    data: &Dataset,
    x_new: &DVector<f64>,
    fitter: &LassoFitter,
    alpha_trim: f64,
    split: &[usize],
) -> Result<TrimSet> {
    check_x_new(data, x_new)?;
    let s = split_conformal(fitter, data, x_new, alpha_trim, split)?;
    let iv = s.interval();
    Ok(TrimSet {
        lo: iv.lo,
        hi: iv.hi,
        method: TrimMethod::SplitTrim,
        alpha_trim,
    })
}
