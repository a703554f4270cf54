use nalgebra::{DMatrix, DVector};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::linalg::SpdFactor;

#[derive(Debug, Clone, PartialEq)]
pub struct RidgeFit {
    pub beta: DVector<f64>,
    pub rho: f64,
}

/// Which linear system to solve for the ridge coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RidgeForm {
    /// p x p normal equations `(X'X + rho I) beta = X'Y`.
    Primal,
    /// n x n kernel form `beta = X'(XX' + rho I)^{-1} Y`.
    Kernel,
}

/// Ridge coefficients `(X'X + rho I)^{-1} X'Y`, solved in whichever form has
/// the smaller system.
pub fn ridge_fit(data: &Dataset, rho: f64) -> Result<RidgeFit> {
    let form = if data.p() > data.n() {
        RidgeForm::Kernel
    } else {
        RidgeForm::Primal
    };
    ridge_fit_with(data, rho, form)
}

pub fn ridge_fit_with(data: &Dataset, rho: f64, form: RidgeForm) -> Result<RidgeFit> {
    if !(rho > 0.0 && rho.is_finite()) {
        return Err(Error::Input(format!(
            "ridge penalty must be positive, got {rho}"
        )));
    }
    let x = data.x();
    let y = data.y();
    let beta = match form {
        RidgeForm::Primal => {
            let mut gram = x.tr_mul(x);
            for j in 0..gram.nrows() {
                gram[(j, j)] += rho;
            }
            SpdFactor::new_unchecked(gram)?.solve_vec(&x.tr_mul(y))
        }
        RidgeForm::Kernel => {
            let mut kernel: DMatrix<f64> = x * x.transpose();
            for i in 0..kernel.nrows() {
                kernel[(i, i)] += rho;
            }
            let alpha = SpdFactor::new_unchecked(kernel)?.solve_vec(y);
            x.tr_mul(&alpha)
        }
    };
    Ok(RidgeFit { beta, rho })
}
