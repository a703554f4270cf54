//! Two-stage trimmed conformal prediction: a cheap trimming pass bounds the
//! candidate range, then conformal prediction with the lasso runs only over
//! that range.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::conformal::{
    check_alpha, conformity_accept, full_conformal, random_split, CandidateGrid, Fitter,
    LassoFitter, PredictionSet,
};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::region::{region_scan, ScanOptions};
use crate::trimming::{max_trim, ridge_trim, split_lasso_trim, TrimMethod, TrimSet};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TcpConfig {
    pub alpha_trim: f64,
    pub alpha_predict: f64,
    pub trim_method: TrimMethod,
    /// Lasso penalty of the prediction step.
    pub lambda: f64,
    /// Lasso penalty for the half-sample fit of split trimming; defaults to
    /// `lambda`.
    #[serde(default)]
    pub trim_lambda: Option<f64>,
    pub rho: f64,
    pub grid_step: f64,
    pub seed: u64,
}

impl TcpConfig {
    pub fn validate(&self) -> Result<()> {
        check_alpha(self.alpha_trim)?;
        check_alpha(self.alpha_predict)?;
        if self.alpha_trim + self.alpha_predict >= 1.0 {
            return Err(Error::Input(format!(
                "alpha_trim + alpha_predict = {} leaves no coverage",
                self.alpha_trim + self.alpha_predict
            )));
        }
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::Input(format!("{name} must be positive, got {v}")))
            }
        };
        positive("lambda", self.lambda)?;
        positive("trim_lambda", self.trim_lambda.unwrap_or(self.lambda))?;
        positive("rho", self.rho)?;
        positive("grid_step", self.grid_step)
    }

    /// Guaranteed coverage `1 - alpha_trim - alpha_predict`.
    pub fn coverage_bound(&self) -> f64 {
        coverage_bound(self.alpha_trim, self.alpha_predict)
    }
}

pub fn coverage_bound(alpha_trim: f64, alpha_predict: f64) -> f64 {
    1.0 - alpha_trim - alpha_predict
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TcpResult {
    /// `None` when trimming left nothing to search.
    pub trim_set: Option<TrimSet>,
    pub prediction_set: PredictionSet,
    pub trial_width: f64,
    pub pi_width: f64,
    pub n_slow_fits: usize,
    pub n_fast_region_evals: usize,
    pub empty_trim: bool,
}

impl TcpResult {
    pub fn covers(&self, y: f64) -> bool {
        self.prediction_set.contains(y)
    }
}

/// Runs the configured trimming step.
pub fn trim(config: &TcpConfig, data: &Dataset, x_new: &DVector<f64>) -> Result<TrimSet> {
    match config.trim_method {
        TrimMethod::MaxTrim => Ok(max_trim(data)),
        TrimMethod::RidgeTrim => ridge_trim(data, x_new, config.rho, config.alpha_trim),
        TrimMethod::SplitTrim => {
            let split = random_split(data.n(), config.seed);
            let fitter = LassoFitter::new(config.trim_lambda.unwrap_or(config.lambda));
            split_lasso_trim(data, x_new, &fitter, config.alpha_trim, &split)
        }
    }
}

/// Trims, then runs lasso conformal prediction at level `alpha_predict` on a
/// grid anchored at both trim endpoints.
pub fn tcp_predict(config: &TcpConfig, data: &Dataset, x_new: &DVector<f64>) -> Result<TcpResult> {
    tcp_predict_with(config, data, x_new, &ScanOptions::default())
}

pub fn tcp_predict_with(
    config: &TcpConfig,
    data: &Dataset,
    x_new: &DVector<f64>,
    scan_opts: &ScanOptions,
) -> Result<TcpResult> {
    config.validate()?;
    let trim_set = match trim(config, data, x_new) {
        Ok(t) => t,
        Err(Error::EmptyTrimSet) => {
            log::warn!("trimming step returned an empty range");
            return Ok(TcpResult {
                trim_set: None,
                prediction_set: PredictionSet::empty(None),
                trial_width: 0.0,
                pi_width: 0.0,
                n_slow_fits: 0,
                n_fast_region_evals: 0,
                empty_trim: true,
            });
        }
        Err(e) => return Err(e),
    };
    let grid = CandidateGrid::new(trim_set.lo, trim_set.hi, config.grid_step)?;
    let scan = region_scan(data, x_new, config.lambda, &grid, scan_opts)?;
    let n = data.n();
    let accepted: Vec<bool> = scan
        .abs_residuals
        .iter()
        .map(|r| conformity_accept(r, n, config.alpha_predict))
        .collect();
    let prediction_set = PredictionSet::from_mask(Some(grid), &scan.points, &accepted);
    Ok(TcpResult {
        trial_width: trim_set.width(),
        pi_width: prediction_set.total_width(),
        trim_set: Some(trim_set),
        prediction_set,
        n_slow_fits: scan.n_solver_calls,
        n_fast_region_evals: scan.n_region_evals,
        empty_trim: false,
    })
}

/// Generic two-stage procedure with arbitrary fast and slow fitters, both
/// evaluated by refitting at every grid point. The slow fitter only runs at
/// points the fast pass accepted.
pub fn trimmed_conformal<Fa: Fitter, Sl: Fitter>(
    fast: &Fa,
    slow: &Sl,
    data: &Dataset,
    x_new: &DVector<f64>,
    grid: &CandidateGrid,
    alpha_trim: f64,
    alpha_predict: f64,
) -> Result<(PredictionSet, PredictionSet)> {
    let trimmed = full_conformal(fast, data, x_new, grid, alpha_trim)?;
    check_alpha(alpha_predict)?;
    let n = data.n();
    let mut accepted = Vec::with_capacity(trimmed.accepted_points.len());
    for &y in &trimmed.accepted_points {
        let r = crate::conformal::augmented_abs_residuals(slow, data, x_new, y)
            .map_err(|e| Error::at(y, e))?;
        accepted.push(conformity_accept(&r, n, alpha_predict));
    }
    let predicted = PredictionSet::from_mask(Some(*grid), &trimmed.accepted_points, &accepted);
    Ok((trimmed, predicted))
}
