//! Regression fitters used as the fast and slow base methods: closed-form
//! ridge and coordinate-descent lasso with a KKT verifier.

mod kkt;
mod lasso;
mod ridge;

pub use kkt::{kkt_check, kkt_residual};
pub use lasso::{
    lasso_fit, lasso_fit_warm, lasso_objective, soft_threshold, CoordinateDescent, LassoFit,
    LassoOptions, SUPPORT_THRESHOLD,
};
pub use ridge::{ridge_fit, ridge_fit_with, RidgeFit, RidgeForm};
