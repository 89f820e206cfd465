//! Convex combination of base-model predictions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on `|Σw - 1|`.
pub const SIMPLEX_TOLERANCE: f64 = 1e-9;

/// Nonnegative weights summing to one, one per base model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct WeightVector(Vec<f64>);

impl WeightVector {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::Contract("weight vector is empty".into()));
        }
        if let Some(w) = weights.iter().find(|w| !(0.0..=1.0).contains(*w)) {
            return Err(Error::Contract(format!("weight {w} outside [0, 1]")));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > SIMPLEX_TOLERANCE {
            return Err(Error::Contract(format!("weights sum to {sum}, not 1")));
        }
        Ok(Self(weights))
    }

    pub fn uniform(m: usize) -> Self {
        assert!(m > 0, "uniform weights need at least one model");
        Self(vec![1.0 / m as f64; m])
    }

    /// All weight on model `index`.
    pub fn one_hot(m: usize, index: usize) -> Self {
        assert!(index < m);
        let mut w = vec![0.0; m];
        w[index] = 1.0;
        Self(w)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Index of the largest weight, lowest index on ties.
    pub fn argmax(&self) -> usize {
        argmax(&self.0)
    }

    pub fn is_valid(&self) -> bool {
        self.0.iter().all(|w| (0.0..=1.0).contains(w))
            && (self.0.iter().sum::<f64>() - 1.0).abs() <= SIMPLEX_TOLERANCE
    }
}

impl TryFrom<Vec<f64>> for WeightVector {
    type Error = Error;

    fn try_from(value: Vec<f64>) -> Result<Self> {
        Self::new(value)
    }
}

impl From<WeightVector> for Vec<f64> {
    fn from(value: WeightVector) -> Self {
        value.0
    }
}

pub(crate) fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// `Σ_i w_i ŷ_i`.
pub fn combine(weights: &WeightVector, predictions: &[f64]) -> Result<f64> {
    if weights.len() != predictions.len() {
        return Err(Error::Contract(format!(
            "{} weights for {} predictions",
            weights.len(),
            predictions.len()
        )));
    }
    if predictions.iter().any(|p| !p.is_finite()) {
        return Err(Error::Contract("non-finite prediction".into()));
    }
    Ok(weights
        .0
        .iter()
        .zip(predictions)
        .map(|(w, p)| w * p)
        .sum())
}

/// Numerically stable softmax onto the simplex.
pub fn from_logits(logits: &[f64]) -> Result<WeightVector> {
    if logits.is_empty() {
        return Err(Error::Contract("no logits".into()));
    }
    if logits.iter().any(|x| !x.is_finite()) {
        return Err(Error::Contract("non-finite logit".into()));
    }
    Ok(WeightVector(softmax(logits)))
}

pub(crate) fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut w: Vec<f64> = logits.iter().map(|x| (x - max).exp()).collect();
    let total: f64 = w.iter().sum();
    for v in &mut w {
        *v /= total;
    }
    // second pass absorbs rounding left over from the division
    let total: f64 = w.iter().sum();
    if total != 1.0 {
        for v in &mut w {
            *v = (*v / total).min(1.0);
        }
    }
    w
}
