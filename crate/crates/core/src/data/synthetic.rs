use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, StudentT};
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};

/// Lag-one correlation of the autoregressive feature model.
pub const AR_COEF: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureModel {
    /// i.i.d. standard normal entries.
    Uncorrelated,
    /// Rows drawn from N(0, S) with `S_ij = 0.9^|i-j|`.
    Ar09,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseModel {
    Gaussian,
    /// Student t with 5 degrees of freedom.
    T5,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n: usize,
    pub p: usize,
    pub k: usize,
    #[serde(default = "default_corr")]
    pub corr: FeatureModel,
    #[serde(default = "default_noise")]
    pub noise: NoiseModel,
    #[serde(default = "default_beta_value")]
    pub beta_value: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_corr() -> FeatureModel {
    FeatureModel::Uncorrelated
}

fn default_noise() -> NoiseModel {
    NoiseModel::Gaussian
}

fn default_beta_value() -> f64 {
    2.0
}

impl SyntheticSpec {
    pub fn new(n: usize, p: usize, k: usize, seed: u64) -> Self {
        Self {
            n,
            p,
            k,
            corr: FeatureModel::Uncorrelated,
            noise: NoiseModel::Gaussian,
            beta_value: default_beta_value(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 || self.p < 1 || self.k > self.p {
            return Err(Error::Input(format!(
                "invalid synthetic shape n={} p={} k={}",
                self.n, self.p, self.k
            )));
        }
        if !self.beta_value.is_finite() {
            return Err(Error::Input("signal value must be finite".into()));
        }
        Ok(())
    }
}

/// One synthetic draw: training sample, test point and its response, and
/// the true coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDraw {
    pub data: Dataset,
    pub x_new: DVector<f64>,
    pub y_new: f64,
    pub beta_true: DVector<f64>,
}

fn feature_row<R: Rng>(rng: &mut R, p: usize, corr: FeatureModel) -> Vec<f64> {
    let mut row: Vec<f64> = (0..p).map(|_| StandardNormal.sample(rng)).collect();
    if corr == FeatureModel::Ar09 {
        let innov = (1.0 - AR_COEF * AR_COEF).sqrt();
        for j in 1..p {
            row[j] = AR_COEF * row[j - 1] + innov * row[j];
        }
    }
    row
}

fn noise<R: Rng>(rng: &mut R, model: NoiseModel, t5: &StudentT<f64>) -> f64 {
    match model {
        NoiseModel::Gaussian => StandardNormal.sample(rng),
        NoiseModel::T5 => t5.sample(rng),
    }
}

/// Draws `n + 1` rows from the linear model `Y = X beta + eps`; the last row
/// is the test point.
pub fn gen_synthetic(spec: &SyntheticSpec) -> Result<SyntheticDraw> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let t5 = StudentT::new(5.0).expect("valid degrees of freedom");
    let (n, p) = (spec.n, spec.p);

    let mut beta_true = DVector::zeros(p);
    for j in sample(&mut rng, p, spec.k) {
        beta_true[j] = spec.beta_value;
    }
    let mut x = DMatrix::zeros(n + 1, p);
    for i in 0..=n {
        for (j, v) in feature_row(&mut rng, p, spec.corr).into_iter().enumerate() {
            x[(i, j)] = v;
        }
    }
    let signal = &x * &beta_true;
    let y = DVector::from_fn(n + 1, |i, _| signal[i] + noise(&mut rng, spec.noise, &t5));

    let x_new = x.row(n).transpose();
    let y_new = y[n];
    let data = Dataset::new(x.rows(0, n).into_owned(), y.rows(0, n).into_owned())?;
    Ok(SyntheticDraw {
        data,
        x_new,
        y_new,
        beta_true,
    })
}

/// `sqrt(n_eff * ln p)`, inflated by `sqrt(5/3)` (the t5 noise variance) for
/// t5 noise. Use `n_eff = n/2` for fits on one split half.
pub fn default_lambda(n_eff: f64, p: usize, noise: NoiseModel) -> f64 {
    let base = (n_eff * (p.max(2) as f64).ln()).sqrt();
    match noise {
        NoiseModel::Gaussian => base,
        NoiseModel::T5 => base * (5.0f64 / 3.0).sqrt(),
    }
}
