use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Linear autoregression fitted by least squares.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArModel {
    /// `coefficients[k]` multiplies the value `k + 1` steps back.
    pub coefficients: Vec<f64>,
    pub intercept: f64,
}

impl ArModel {
    /// Minimum-norm least-squares fit; `inputs` rows are ordered oldest to newest.
    pub fn fit(inputs: &[Vec<f64>], targets: &[f64], with_intercept: bool) -> Result<Self> {
        let lag = inputs[0].len();
        let cols = lag + usize::from(with_intercept);
        let x = DMatrix::from_fn(inputs.len(), cols, |r, c| {
            if c < lag {
                inputs[r][lag - 1 - c]
            } else {
                1.0
            }
        });
        let y = DVector::from_column_slice(targets);
        let svd = x.svd(true, true);
        let max_sv = svd.singular_values.max();
        let tol = max_sv * f64::EPSILON * (inputs.len().max(cols) as f64);
        let beta = svd.solve(&y, tol).map_err(|e| Error::Training {
            model: "ar-least-squares".into(),
            message: e.to_string(),
        })?;
        if beta.iter().any(|b| !b.is_finite()) {
            return Err(Error::Numeric {
                model: "ar-least-squares".into(),
                message: "non-finite coefficients".into(),
            });
        }
        Ok(Self {
            coefficients: beta.iter().take(lag).copied().collect(),
            intercept: if with_intercept { beta[lag] } else { 0.0 },
        })
    }

    /// `history` is ordered oldest to newest.
    pub fn predict(&self, history: &[f64]) -> f64 {
        self.intercept
            + self
                .coefficients
                .iter()
                .zip(history.iter().rev())
                .map(|(c, v)| c * v)
                .sum::<f64>()
    }
}
