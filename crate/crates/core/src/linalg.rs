//! Small dense helpers shared by the solvers and the region code.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::error::{Error, Result};

/// Gram matrices with a larger eigenvalue ratio are treated as singular.
pub const MAX_GRAM_CONDITION: f64 = 1e12;

/// Cholesky factor of a symmetric positive definite matrix, with a
/// condition-number guard.
pub(crate) struct SpdFactor {
    chol: Cholesky<f64, Dyn>,
}

impl SpdFactor {
    pub(crate) fn new(a: DMatrix<f64>) -> Result<Self> {
        if a.nrows() > 0 {
            let eig = SymmetricEigen::new(a.clone());
            let max = eig.eigenvalues.max();
            let min = eig.eigenvalues.min();
            let condition = if min > 0.0 { max / min } else { f64::INFINITY };
            if condition.is_nan() || condition > MAX_GRAM_CONDITION {
                return Err(Error::Rank { condition });
            }
        }
        let chol = Cholesky::new(a).ok_or(Error::Rank {
            condition: f64::INFINITY,
        })?;
        Ok(Self { chol })
    }

    /// Factor without the eigenvalue guard; for matrices that are known to be
    /// well conditioned, e.g. ridge systems.
    pub(crate) fn new_unchecked(a: DMatrix<f64>) -> Result<Self> {
        let chol = Cholesky::new(a).ok_or(Error::Rank {
            condition: f64::INFINITY,
        })?;
        Ok(Self { chol })
    }

    pub(crate) fn solve_vec(&self, b: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(b)
    }

    pub(crate) fn solve_mat(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        self.chol.solve(b)
    }
}
