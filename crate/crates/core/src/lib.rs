//! Trimmed conformal prediction for sparse linear regression.
//!
//! A fast trimming step (empirical maximum, closed-form ridge conformal, or
//! split conformal with the lasso) narrows the range of candidate responses;
//! full conformal prediction with the lasso then runs only over that range,
//! reusing one lasso solve per signed-support region of candidate values.

pub mod conformal;
pub mod data;
pub mod dataset;
pub mod error;
pub mod harness;
mod linalg;
pub mod region;
pub mod solvers;
pub mod tcp;
pub mod trimming;

pub use conformal::{
    conformity_accept, full_conformal, quantile_index, split_conformal, CandidateGrid, Fitter,
    Interval, LassoFitter, LinearModel, PredictionSet, Predictor, RidgeFitter, SplitInterval,
    ZeroFitter,
};
pub use dataset::Dataset;
pub use error::{Error, Result};
pub use harness::{run_bikeshare, run_experiment, ExperimentConfig, ExperimentMetrics, Method};
pub use linalg::MAX_GRAM_CONDITION;
pub use region::{region_scan, RegionScan, ScanOptions, SupportRegion};
pub use solvers::{kkt_check, lasso_fit, ridge_fit, LassoFit, LassoOptions, RidgeFit};
pub use tcp::{coverage_bound, tcp_predict, TcpConfig, TcpResult};
pub use trimming::{max_trim, ridge_trim, split_lasso_trim, TrimMethod, TrimSet};
