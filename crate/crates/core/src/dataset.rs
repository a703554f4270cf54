use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// A training sample: design matrix with one row per observation and the
/// matching response vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    x: DMatrix<f64>,
    y: DVector<f64>,
}

impl Dataset {
    pub fn new(x: DMatrix<f64>, y: DVector<f64>) -> Result<Self> {
        if x.nrows() != y.len() {
            return Err(Error::Input(format!(
                "design has {} rows but response has {} entries",
                x.nrows(),
                y.len()
            )));
        }
        if x.nrows() < 1 || x.ncols() < 1 {
            return Err(Error::Input(format!(
                "need at least one sample and one feature, got {}x{}",
                x.nrows(),
                x.ncols()
            )));
        }
        if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Input("non-finite entry in data".into()));
        }
        Ok(Self { x, y })
    }

    /// Builds a dataset from row-major feature rows.
    pub fn from_rows(rows: &[Vec<f64>], y: &[f64]) -> Result<Self> {
        let p = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != p) {
            return Err(Error::Input("ragged feature rows".into()));
        }
        let x = DMatrix::from_fn(rows.len(), p, |i, j| rows[i][j]);
        Self::new(x, DVector::from_column_slice(y))
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    /// Dataset augmented with the candidate point `(x_new, y)` as its last row.
    pub fn augmented(&self, x_new: &DVector<f64>, y: f64) -> Result<Dataset> {
        check_x_new(self, x_new)?;
        if !y.is_finite() {
            return Err(Error::Input(format!("candidate y = {y} is not finite")));
        }
        let (n, p) = self.x.shape();
        let x = DMatrix::from_fn(
            n + 1,
            p,
            |i, j| if i < n { self.x[(i, j)] } else { x_new[j] },
        );
        let yy = DVector::from_fn(n + 1, |i, _| if i < n { self.y[i] } else { y });
        Ok(Dataset { x, y: yy })
    }

    /// Rows selected by `idx`, in the given order.
    pub fn subset(&self, idx: &[usize]) -> Result<Dataset> {
        if idx.is_empty() {
            return Err(Error::Input("empty row subset".into()));
        }
        if let Some(&bad) = idx.iter().find(|&&i| i >= self.n()) {
            return Err(Error::Input(format!("row index {bad} out of range")));
        }
        let x = self.x.select_rows(idx);
        let y = DVector::from_iterator(idx.len(), idx.iter().map(|&i| self.y[i]));
        Ok(Dataset { x, y })
    }

    /// Stacks the training design over `x_new` without a response.
    pub fn stacked_design(&self, x_new: &DVector<f64>) -> Result<DMatrix<f64>> {
        check_x_new(self, x_new)?;
        let (n, p) = self.x.shape();
        Ok(DMatrix::from_fn(n + 1, p, |i, j| {
            if i < n {
                self.x[(i, j)]
            } else {
                x_new[j]
            }
        }))
    }
}

pub(crate) fn check_x_new(data: &Dataset, x_new: &DVector<f64>) -> Result<()> {
    if x_new.len() != data.p() {
        return Err(Error::Input(format!(
            "test point has {} features, training data has {}",
            x_new.len(),
            data.p()
        )));
    }
    if x_new.iter().any(|v| !v.is_finite()) {
        return Err(Error::Input("non-finite entry in test point".into()));
    }
    Ok(())
}
