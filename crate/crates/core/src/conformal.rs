//! Rank and quantile rules, the full conformal set over a candidate grid, and
//! the split conformal interval. Everything here is generic over the fitter.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{check_x_new, Dataset};
use crate::error::{Error, Result};
use crate::solvers::{lasso_fit, ridge_fit, LassoOptions};

/// `ceil((1 - alpha) * m)` clamped to `[1, m]`.
///
/// Products that land within floating-point noise of an integer are rounded
/// to it, so `alpha = 1/m` yields `m - 1` rather than `m`.
pub fn quantile_index(alpha: f64, m: usize) -> usize {
    let x = (1.0 - alpha) * m as f64;
    let r = x.round();
    let k = if (x - r).abs() <= 1e-9 * x.abs().max(1.0) {
        r
    } else {
        x.ceil()
    };
    (k.max(1.0) as usize).min(m.max(1))
}

/// Rank of entry `test_index` among `scores`: one plus the number of strictly
/// smaller entries plus the number of other entries tied with it at an index
/// no larger than `test_index`.
pub fn conformity_rank(scores: &[f64], test_index: usize) -> usize {
    let t = scores[test_index];
    1 + scores
        .iter()
        .enumerate()
        .filter(|&(j, &s)| s < t || (s == t && j < test_index))
        .count()
}

/// Accept when the test score ranks within the bottom `1 - alpha` quantile.
pub fn conformity_accept(scores: &[f64], test_index: usize, alpha: f64) -> bool {
    conformity_rank(scores, test_index) <= quantile_index(alpha, scores.len())
}

/// Evenly spaced candidate response values; both endpoints are always present.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CandidateGrid {
    pub lo: f64,
    pub hi: f64,
    pub step: f64,
}

impl CandidateGrid {
    pub fn new(lo: f64, hi: f64, step: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return Err(Error::Input(format!("invalid grid range [{lo}, {hi}]")));
        }
        if !(step > 0.0 && step.is_finite()) {
            return Err(Error::Input(format!(
                "grid step must be positive, got {step}"
            )));
        }
        Ok(Self { lo, hi, step })
    }

    /// `count` intervals between `lo` and `hi`.
    pub fn with_count(lo: f64, hi: f64, count: usize) -> Result<Self> {
        if count == 0 {
            return Err(Error::Input("grid count must be positive".into()));
        }
        let step = if hi > lo {
            (hi - lo) / count as f64
        } else {
            1.0
        };
        Self::new(lo, hi, step)
    }

    /// Default resolution of one thousandth of the range.
    pub fn with_default_step(lo: f64, hi: f64) -> Result<Self> {
        Self::with_count(lo, hi, 1000)
    }

    pub fn points(&self) -> Vec<f64> {
        let span = self.hi - self.lo;
        let steps = (span / self.step + 1e-9).floor() as usize;
        let mut pts: Vec<f64> = (0..=steps)
            .map(|k| self.lo + k as f64 * self.step)
            .collect();
        let last = *pts.last().expect("at least lo");
        if self.hi - last > 1e-9 * self.step {
            pts.push(self.hi);
        } else if let Some(l) = pts.last_mut() {
            *l = self.hi;
        }
        pts
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn contains(&self, y: f64) -> bool {
        self.lo <= y && y <= self.hi
    }
}

/// Accepted candidate values, summarized as maximal runs of consecutive
/// accepted grid points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionSet {
    pub intervals: Vec<Interval>,
    pub grid: Option<CandidateGrid>,
    pub accepted_points: Vec<f64>,
}

impl PredictionSet {
    pub fn empty(grid: Option<CandidateGrid>) -> Self {
        Self {
            intervals: Vec::new(),
            grid,
            accepted_points: Vec::new(),
        }
    }

    /// Builds the set from grid points and per-point acceptance flags.
    pub fn from_mask(grid: Option<CandidateGrid>, points: &[f64], accepted: &[bool]) -> Self {
        debug_assert_eq!(points.len(), accepted.len());
        let mut intervals = Vec::new();
        let mut run: Option<Interval> = None;
        for (&y, &ok) in points.iter().zip(accepted) {
            match (ok, run.as_mut()) {
                (true, Some(r)) => r.hi = y,
                (true, None) => run = Some(Interval { lo: y, hi: y }),
                (false, Some(_)) => intervals.extend(run.take()),
                (false, None) => {}
            }
        }
        intervals.extend(run);
        let accepted_points = points
            .iter()
            .zip(accepted)
            .filter_map(|(&y, &ok)| ok.then_some(y))
            .collect();
        Self {
            intervals,
            grid,
            accepted_points,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.intervals.is_empty()
    }

    /// Summed length of the accepted runs.
    pub fn total_width(&self) -> f64 {
        self.intervals.iter().map(Interval::width).sum()
    }

    pub fn contains(&self, y: f64) -> bool {
        self.intervals.iter().any(|iv| iv.contains(y))
    }
}

/// Predictive function produced by a [`Fitter`].
pub trait Predictor {
    fn predict(&self, x: &DMatrix<f64>) -> DVector<f64>;

    fn predict_one(&self, x: &DVector<f64>) -> f64;
}

/// A regression procedure mapping a dataset to a predictive function.
pub trait Fitter: Sync {
    type Model: Predictor;

    fn fit(&self, data: &Dataset) -> Result<Self::Model>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub beta: DVector<f64>,
}

impl Predictor for LinearModel {
    fn predict(&self, x: &DMatrix<f64>) -> DVector<f64> {
        x * &self.beta
    }

    fn predict_one(&self, x: &DVector<f64>) -> f64 {
        x.dot(&self.beta)
    }
}

/// Always predicts zero.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroFitter;

impl Fitter for ZeroFitter {
    type Model = LinearModel;

    fn fit(&self, data: &Dataset) -> Result<LinearModel> {
        Ok(LinearModel {
            beta: DVector::zeros(data.p()),
        })
    }
}

#[derive(Debug, Clone, Copy)]
pub struct RidgeFitter {
    pub rho: f64,
}

impl Fitter for RidgeFitter {
    type Model = LinearModel;

    fn fit(&self, data: &Dataset) -> Result<LinearModel> {
        Ok(LinearModel {
            beta: ridge_fit(data, self.rho)?.beta,
        })
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LassoFitter {
    pub lambda: f64,
    pub options: LassoOptions,
}

impl LassoFitter {
    pub fn new(lambda: f64) -> Self {
        Self {
            lambda,
            options: LassoOptions::default(),
        }
    }
}

impl Fitter for LassoFitter {
    type Model = LinearModel;

    fn fit(&self, data: &Dataset) -> Result<LinearModel> {
        Ok(LinearModel {
            beta: lasso_fit(data, self.lambda, &self.options)?.beta,
        })
    }
}

/// Absolute residuals of `fitter` refit on the data augmented with `(x_new, y)`.
/// The last entry belongs to the candidate point.
pub fn augmented_abs_residuals<F: Fitter>(
    fitter: &F,
    data: &Dataset,
    x_new: &DVector<f64>,
    y: f64,
) -> Result<Vec<f64>> {
    let aug = data.augmented(x_new, y)?;
    let model = fitter.fit(&aug)?;
    let fitted = model.predict(aug.x());
    Ok(aug
        .y()
        .iter()
        .zip(fitted.iter())
        .map(|(a, b)| (a - b).abs())
        .collect())
}

/// Full conformal prediction set over `grid`: one refit per candidate value.
///
/// Points are evaluated in parallel; the result does not depend on the
/// schedule.
pub fn full_conformal<F: Fitter>(
    fitter: &F,
    data: &Dataset,
    x_new: &DVector<f64>,
    grid: &CandidateGrid,
    alpha: f64,
) -> Result<PredictionSet> {
    check_alpha(alpha)?;
    check_x_new(data, x_new)?;
    let points = grid.points();
    let n = data.n();
    let outcomes: Vec<Result<bool>> = points
        .par_iter()
        .map(|&y| {
            augmented_abs_residuals(fitter, data, x_new, y)
                .map(|r| conformity_accept(&r, n, alpha))
                .map_err(|e| Error::at(y, e))
        })
        .collect();
    let accepted = outcomes.into_iter().collect::<Result<Vec<bool>>>()?;
    Ok(PredictionSet::from_mask(Some(*grid), &points, &accepted))
}

/// Split conformal interval `center +/- radius`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitInterval {
    pub center: f64,
    pub radius: f64,
    pub split_indices: Vec<usize>,
}

impl SplitInterval {
    pub fn interval(&self) -> Interval {
        Interval {
            lo: self.center - self.radius,
            hi: self.center + self.radius,
        }
    }
}

/// Fitting half `I1` for a dataset of `n` rows: the first `floor(n/2)`
/// indices of a seeded shuffle, returned in increasing order.
pub fn random_split(n: usize, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut first: Vec<usize> = idx.into_iter().take(n / 2).collect();
    first.sort_unstable();
    first
}

/// Complement of `split` within `0..n`.
pub fn split_complement(n: usize, split: &[usize]) -> Vec<usize> {
    let mut mark = vec![false; n];
    for &i in split {
        mark[i] = true;
    }
    (0..n).filter(|&i| !mark[i]).collect()
}

pub(crate) fn validate_split(n: usize, split: &[usize]) -> Result<Vec<usize>> {
    if split.len() != n / 2 {
        return Err(Error::Input(format!(
            "fitting half must have floor(n/2) = {} rows, got {}",
            n / 2,
            split.len()
        )));
    }
    let mut seen = vec![false; n];
    for &i in split {
        if i >= n || std::mem::replace(&mut seen[i], true) {
            return Err(Error::Input(format!("invalid or repeated split index {i}")));
        }
    }
    let rest = split_complement(n, split);
    if rest.is_empty() || split.is_empty() {
        return Err(Error::Input("both split halves must be nonempty".into()));
    }
    Ok(rest)
}

/// The `quantile_index(alpha, m + 1)`-th smallest of `m` calibration scores,
/// with the index clamped to `m`.
pub fn split_radius(calibration: &[f64], alpha: f64) -> f64 {
    let mut sorted = calibration.to_vec();
    sorted.sort_by(f64::total_cmp);
    let k = quantile_index(alpha, sorted.len() + 1).min(sorted.len());
    sorted[k - 1]
}

pub fn split_conformal<F: Fitter>(
    fitter: &F,
    data: &Dataset,
    x_new: &DVector<f64>,
    alpha: f64,
    split: &[usize],
) -> Result<SplitInterval> {
    check_alpha(alpha)?;
    check_x_new(data, x_new)?;
    let calib = validate_split(data.n(), split)?;
    let model = fitter.fit(&data.subset(split)?)?;
    let held = data.subset(&calib)?;
    let fitted = model.predict(held.x());
    let scores: Vec<f64> = held
        .y()
        .iter()
        .zip(fitted.iter())
        .map(|(a, b)| (a - b).abs())
        .collect();
    Ok(SplitInterval {
        center: model.predict_one(x_new),
        radius: split_radius(&scores, alpha),
        split_indices: split.to_vec(),
    })
}

pub(crate) fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::Input(format!(
            "miscoverage level must lie in (0, 1), got {alpha}"
        )))
    }
}
