use serde::{Deserialize, Serialize};

use super::FeatureError;
use crate::stats::median;

/// Clip floor applied before the logarithm.
pub const LOG_EPSILON: f64 = 1e-6;

/// Dense `n × d` feature table, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    names: Vec<String>,
    rows: usize,
    values: Vec<f64>,
}

impl FeatureMatrix {
    pub fn new(names: Vec<String>, rows: Vec<Vec<f64>>) -> Result<Self, FeatureError> {
        let d = names.len();
        let mut values = Vec::with_capacity(rows.len() * d);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != d {
                return Err(FeatureError::RowWidth { row: i, expected: d, got: r.len() });
            }
            if r.iter().any(|v| !v.is_finite()) {
                return Err(FeatureError::NonFinite { row: i });
            }
            values.extend_from_slice(r);
        }
        Ok(Self { names, rows: rows.len(), values })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn n_rows(&self) -> usize {
        self.rows
    }

    pub fn n_cols(&self) -> usize {
        self.names.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let d = self.n_cols();
        &self.values[i * d..(i + 1) * d]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        (0..self.rows).map(move |i| self.row(i))
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.values[i * self.n_cols() + j]).collect()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n_cols() + j]
    }
}

/// Frozen statistics of one column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnNormalizer {
    pub name: String,
    /// Training minimum.
    pub min: f64,
    /// Median of `x - min` over the training column.
    pub shift: f64,
    /// Mean of the log-transformed training column.
    pub mean: f64,
    /// Population std of the log-transformed training column.
    pub std: f64,
}

impl ColumnNormalizer {
    fn log_transform(&self, x: f64, eps: f64) -> f64 {
        (x - self.min + self.shift).max(eps).ln()
    }

    /// Constant columns (zero spread after the log) map to 0.
    pub fn is_degenerate(&self) -> bool {
        self.std <= f64::EPSILON * self.mean.abs().max(1.0)
    }

    pub fn transform(&self, x: f64, eps: f64) -> f64 {
        if self.is_degenerate() {
            0.0
        } else {
            (self.log_transform(x, eps) - self.mean) / self.std
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizerState {
    pub epsilon: f64,
    pub columns: Vec<ColumnNormalizer>,
}

/// Fit the shift-log-z-score transform on a training matrix.
pub fn fit_normalizer(x: &FeatureMatrix) -> Result<NormalizerState, FeatureError> {
    if x.n_rows() < 2 {
        return Err(FeatureError::TooFewRows(x.n_rows()));
    }
    let eps = LOG_EPSILON;
    let columns = (0..x.n_cols())
        .map(|j| {
            let col = x.column(j);
            let min = col.iter().copied().fold(f64::INFINITY, f64::min);
            let mut shifted: Vec<f64> = col.iter().map(|v| v - min).collect();
            let shift = median(&mut shifted);
            let mut c = ColumnNormalizer { name: x.names()[j].clone(), min, shift, mean: 0.0, std: 0.0 };
            let logs: Vec<f64> = col.iter().map(|&v| c.log_transform(v, eps)).collect();
            let n = logs.len() as f64;
            c.mean = logs.iter().sum::<f64>() / n;
            c.std = (logs.iter().map(|l| (l - c.mean).powi(2)).sum::<f64>() / n).sqrt();
            c
        })
        .collect();
    Ok(NormalizerState { epsilon: eps, columns })
}

/// Transform with frozen training statistics; never refits.
pub fn apply_normalizer(x: &FeatureMatrix, state: &NormalizerState) -> Result<FeatureMatrix, FeatureError> {
    let expected: Vec<&str> = state.columns.iter().map(|c| c.name.as_str()).collect();
    let got: Vec<&str> = x.names().iter().map(String::as_str).collect();
    if expected != got {
        return Err(FeatureError::ColumnMismatch {
            expected: expected.iter().map(|s| s.to_string()).collect(),
            got: got.iter().map(|s| s.to_string()).collect(),
        });
    }
    let rows = x
        .rows()
        .map(|r| r.iter().zip(&state.columns).map(|(&v, c)| c.transform(v, state.epsilon)).collect())
        .collect();
    FeatureMatrix::new(x.names().to_vec(), rows)
}
