use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use nalgebra::{DMatrix, DVector};
use tcp_core::Dataset;

/// Numeric CSV with a header row.
pub struct NumericTable {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl NumericTable {
    pub fn read(path: &Path) -> Result<Self> {
        let mut rdr =
            csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
        let columns: Vec<String> = rdr
            .headers()?
            .iter()
            .map(|h| h.trim().to_string())
            .collect();
        let mut rows = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let row = rec
                .iter()
                .map(|v| v.trim().parse::<f64>())
                .collect::<Result<Vec<f64>, _>>()
                .map_err(|e| anyhow!("{} row {}: {e}", path.display(), i + 1))?;
            if row.len() != columns.len() {
                bail!(
                    "{} row {}: expected {} fields",
                    path.display(),
                    i + 1,
                    columns.len()
                );
            }
            rows.push(row);
        }
        if rows.is_empty() {
            bail!("{} has no data rows", path.display());
        }
        Ok(Self { columns, rows })
    }

    fn column(&self, name: &str) -> Result<usize> {
        self.columns
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| anyhow!("missing column {name:?}"))
    }
}

/// Training set from `table`, with `response` as the target and every other
/// column as a feature, plus the feature names in order.
pub fn training_set(table: &NumericTable, response: &str) -> Result<(Dataset, Vec<String>)> {
    let target = table.column(response)?;
    let features: Vec<usize> = (0..table.columns.len()).filter(|&j| j != target).collect();
    if features.is_empty() {
        bail!("no feature columns besides {response:?}");
    }
    let x = DMatrix::from_fn(table.rows.len(), features.len(), |i, j| {
        table.rows[i][features[j]]
    });
    let y = DVector::from_iterator(table.rows.len(), table.rows.iter().map(|r| r[target]));
    let names = features.iter().map(|&j| table.columns[j].clone()).collect();
    Ok((Dataset::new(x, y)?, names))
}

/// Test points in the feature order of the training set. A response column,
/// if present, is returned alongside.
pub fn test_points(
    table: &NumericTable,
    features: &[String],
    response: &str,
) -> Result<Vec<(DVector<f64>, Option<f64>)>> {
    let idx = features
        .iter()
        .map(|f| table.column(f))
        .collect::<Result<Vec<_>>>()?;
    let target = table.column(response).ok();
    Ok(table
        .rows
        .iter()
        .map(|r| {
            (
                DVector::from_iterator(idx.len(), idx.iter().map(|&j| r[j])),
                target.map(|t| r[t]),
            )
        })
        .collect())
}
