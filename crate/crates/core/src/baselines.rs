//! Comparison weighting strategies: an online neural-network weighter,
//! static least-squares weights on the simplex, uniform averaging and
//! single-model selection.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::combiner::{combine, from_logits, softmax, WeightVector};
use crate::error::{Error, Result};
use crate::forecast::ForecastPanel;
use crate::nn::Mlp;
use crate::seed::rng_for;

pub const HIDDEN: usize = 4;
pub const DEFAULT_NN_LEARNING_RATE: f64 = 0.01;
const INIT_BOUND: f64 = 0.1;

/// `M → 4 → 4 → M` tanh network whose softmaxed output weights the
/// base-model predictions. Trained by one SGD step per sample.
///
/// Inputs are standardized with a fixed `(offset, scale)` and the squared
/// error is measured in units of `scale`, so the learning rate does not
/// depend on the magnitude of the series.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OnlineNNWeighter {
    pub net: Mlp,
    pub learning_rate: f64,
    pub seed: u64,
    pub offset: f64,
    pub scale: f64,
    pub updates: usize,
}

impl OnlineNNWeighter {
    pub fn new(models: usize, learning_rate: f64, seed: u64) -> Self {
        let mut rng = rng_for(seed, "online-nn");
        Self {
            net: Mlp::init_uniform(&[models, HIDDEN, HIDDEN, models], INIT_BOUND, &mut rng),
            learning_rate,
            seed,
            offset: 0.0,
            scale: 1.0,
            updates: 0,
        }
    }

    pub fn with_scaling(mut self, offset: f64, scale: f64) -> Self {
        self.offset = offset;
        self.scale = if scale > 0.0 && scale.is_finite() { scale } else { 1.0 };
        self
    }

    pub fn models(&self) -> usize {
        self.net.sizes()[0]
    }

    fn inputs(&self, predictions: &[f64]) -> Vec<f64> {
        predictions
            .iter()
            .map(|p| (p - self.offset) / self.scale)
            .collect()
    }

    /// Forward pass only.
    pub fn infer(&self, predictions: &[f64]) -> Result<WeightVector> {
        self.check(predictions)?;
        from_logits(&self.net.predict(&self.inputs(predictions))).map_err(|_| Error::Numeric {
            model: "online-nn".into(),
            message: "non-finite output".into(),
        })
    }

    fn check(&self, predictions: &[f64]) -> Result<()> {
        if predictions.len() != self.models() {
            return Err(Error::Contract(format!(
                "online NN expects {} predictions, got {}",
                self.models(),
                predictions.len()
            )));
        }
        if predictions.iter().any(|p| !p.is_finite()) {
            return Err(Error::Contract("non-finite prediction".into()));
        }
        Ok(())
    }

    /// Loss `((y - Σ w_i ŷ_i) / scale)²` and its gradient w.r.t. the network parameters.
    pub fn loss_and_gradient(&self, predictions: &[f64], truth: f64) -> (f64, Vec<f64>) {
        let trace = self.net.forward(&self.inputs(predictions));
        let w = softmax(trace.output());
        let combined: f64 = w.iter().zip(predictions).map(|(a, b)| a * b).sum();
        let residual = (truth - combined) / self.scale;
        let loss = residual * residual;
        // ∂loss/∂w_i, then through the softmax Jacobian
        let d_w: Vec<f64> = predictions
            .iter()
            .map(|p| -2.0 * residual * p / self.scale)
            .collect();
        let mean: f64 = w.iter().zip(&d_w).map(|(a, b)| a * b).sum();
        let d_logits: Vec<f64> = w.iter().zip(&d_w).map(|(wi, g)| wi * (g - mean)).collect();
        let mut grad = vec![0.0; self.net.params().len()];
        self.net.backward(&trace, &d_logits, &mut grad);
        (loss, grad)
    }

    /// Returns the weights used for this sample, then takes one SGD step
    /// toward `truth`. On a non-finite loss the parameters are left untouched.
    pub fn step(&mut self, predictions: &[f64], truth: f64) -> Result<WeightVector> {
        let weights = self.infer(predictions)?;
        let (loss, grad) = self.loss_and_gradient(predictions, truth);
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Numeric {
                model: "online-nn".into(),
                message: format!("non-finite loss {loss}; update rolled back"),
            });
        }
        let saved = self.net.params().to_vec();
        for (p, g) in self.net.params_mut().iter_mut().zip(&grad) {
            *p -= self.learning_rate * g;
        }
        if self.net.params().iter().any(|p| !p.is_finite()) {
            self.net.params_mut().copy_from_slice(&saved);
            return Err(Error::Numeric {
                model: "online-nn".into(),
                message: "non-finite parameters; update rolled back".into(),
            });
        }
        self.updates += 1;
        Ok(weights)
    }

    /// One pass over the panel in arrival order. Returns the weights used at each column.
    pub fn train(&mut self, panel: &ForecastPanel, truth: &[f64]) -> Result<Vec<WeightVector>> {
        if truth.len() != panel.len() {
            return Err(Error::Contract("truth and panel lengths differ".into()));
        }
        (0..panel.len())
            .map(|t| self.step(&panel.column(t), truth[t]))
            .collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| Error::json("serializing online NN", e))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), e))
    }
}

/// How the trained online NN is used on test samples.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OnlineNNTestMode {
    /// The frozen network maps each test column to its own weights.
    #[default]
    FrozenNetwork,
    /// The weight vector produced at the last training sample is reused.
    FinalWeights,
}

/// `nn_step`: weights for this sample plus one update.
pub fn nn_step(weighter: &mut OnlineNNWeighter, predictions: &[f64], truth: f64) -> Result<WeightVector> {
    weighter.step(predictions, truth)
}

/// `nn_infer`: forward pass without any update.
pub fn nn_infer(weighter: &OnlineNNWeighter, predictions: &[f64]) -> Result<WeightVector> {
    weighter.infer(predictions)
}

pub const STATIC_GRADIENT_TOLERANCE: f64 = 1e-8;
pub const STATIC_MAX_ITERATIONS: usize = 200_000;

/// `Σ_t (y_t - Σ_i w_i ŷ_{i,t})²`
pub fn static_objective(panel: &ForecastPanel, truth: &[f64], weights: &[f64]) -> f64 {
    (0..panel.len())
        .map(|t| {
            let combined: f64 = weights
                .iter()
                .enumerate()
                .map(|(i, w)| w * panel.predictions[i][t])
                .sum();
            (truth[t] - combined).powi(2)
        })
        .sum()
}

/// Least-squares weights on the simplex.
///
/// Solved by accelerated projected gradient. Convergence is measured by the
/// gradient norm in softmax-logit space, with the objective divided by
/// `Σ y²` so the tolerance is scale free.
pub fn fit_static_weights(panel: &ForecastPanel, truth: &[f64]) -> Result<WeightVector> {
    let m = panel.models();
    if truth.len() != panel.len() {
        return Err(Error::Contract(format!(
            "{} truth values for {} panel columns",
            truth.len(),
            panel.len()
        )));
    }
    if panel.len() < m {
        return Err(Error::Contract(format!(
            "need at least {m} samples for {m} models, got {}",
            panel.len()
        )));
    }
    // Gram matrix form: f(w) = (wᵀ G w - 2 bᵀ w + c) / c
    let mut gram = vec![vec![0.0; m]; m];
    let mut b = vec![0.0; m];
    for t in 0..panel.len() {
        for i in 0..m {
            let pi = panel.predictions[i][t];
            b[i] += pi * truth[t];
            for j in 0..m {
                gram[i][j] += pi * panel.predictions[j][t];
            }
        }
    }
    let energy: f64 = truth.iter().map(|y| y * y).sum();
    let norm = if energy > 0.0 { energy } else { 1.0 };
    let objective = |w: &[f64]| -> f64 {
        let mut quad = 0.0;
        for i in 0..m {
            for j in 0..m {
                quad += w[i] * gram[i][j] * w[j];
            }
        }
        let lin: f64 = w.iter().zip(&b).map(|(a, c)| a * c).sum();
        (quad - 2.0 * lin + energy) / norm
    };
    let gradient = |w: &[f64]| -> Vec<f64> {
        (0..m)
            .map(|i| {
                let gw: f64 = (0..m).map(|j| gram[i][j] * w[j]).sum();
                2.0 * (gw - b[i]) / norm
            })
            .collect()
    };
    // Gradient w.r.t. softmax logits, `w ⊙ (g - ⟨w, g⟩)`; zero at the optimum
    // whether it lies inside the simplex or on its boundary.
    let logit_gradient_norm = |w: &[f64]| -> f64 {
        let g = gradient(w);
        let mean: f64 = w.iter().zip(&g).map(|(a, c)| a * c).sum();
        w.iter()
            .zip(&g)
            .map(|(wi, gi)| (wi * (gi - mean)).powi(2))
            .sum::<f64>()
            .sqrt()
    };
    let lipschitz = 2.0 * largest_eigenvalue(&gram) / norm;
    if !(lipschitz > 0.0) {
        return WeightVector::new(vec![1.0 / m as f64; m]);
    }

    // Accelerated projected gradient with function-value restarts.
    let mut x = vec![1.0 / m as f64; m];
    let mut fx = objective(&x);
    let mut y = x.clone();
    let mut t: f64 = 1.0;
    let mut grad_norm = f64::INFINITY;
    for _ in 0..STATIC_MAX_ITERATIONS {
        grad_norm = logit_gradient_norm(&x);
        if grad_norm < STATIC_GRADIENT_TOLERANCE {
            return WeightVector::new(x);
        }
        let g = gradient(&y);
        let next = project_to_simplex(&y.iter().zip(&g).map(|(a, c)| a - c / lipschitz).collect::<Vec<_>>());
        let f_next = objective(&next);
        if f_next > fx && t > 1.0 {
            y = x.clone();
            t = 1.0;
            continue;
        }
        let t_next = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
        let momentum = (t - 1.0) / t_next;
        y = next
            .iter()
            .zip(&x)
            .map(|(n, o)| n + momentum * (n - o))
            .collect();
        x = next;
        fx = f_next;
        t = t_next;
    }
    Err(Error::Optimization {
        iterations: STATIC_MAX_ITERATIONS,
        gradient_norm: grad_norm,
        best: WeightVector::new(x)?,
    })
}

fn largest_eigenvalue(gram: &[Vec<f64>]) -> f64 {
    let m = gram.len();
    let matrix = nalgebra::DMatrix::from_fn(m, m, |i, j| gram[i][j]);
    matrix.symmetric_eigenvalues().max()
}

/// Euclidean projection onto `{w ≥ 0, Σ w = 1}` by the sort-and-threshold rule.
fn project_to_simplex(v: &[f64]) -> Vec<f64> {
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumulative = 0.0;
    let mut theta = 0.0;
    for (j, u) in sorted.iter().enumerate() {
        cumulative += u;
        let candidate = (cumulative - 1.0) / (j + 1) as f64;
        if u - candidate > 0.0 {
            theta = candidate;
        }
    }
    v.iter().map(|x| (x - theta).max(0.0)).collect()
}

/// Applies fixed weights to every column.
pub fn apply_weights(weights: &WeightVector, panel: &ForecastPanel) -> Result<Vec<f64>> {
    (0..panel.len())
        .map(|t| combine(weights, &panel.column(t)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_for;
    use rand::Rng as _;
    use rand_distr::{Distribution, StandardNormal};

    fn panel(rows: Vec<Vec<f64>>) -> ForecastPanel {
        let t = rows[0].len();
        ForecastPanel {
            model_names: (0..rows.len()).map(|i| format!("m{i}")).collect(),
            predictions: rows,
            time_indices: (1..=t).collect(),
        }
    }

    #[test]
    fn zero_rate_is_pure_forward_pass() {
        let mut nn = OnlineNNWeighter::new(4, 0.0, 3);
        let before = nn.clone();
        let w = nn.step(&[1.0, 2.0, 3.0, 4.0], 10.0).unwrap();
        assert_eq!(w, before.infer(&[1.0, 2.0, 3.0, 4.0]).unwrap());
        assert_eq!(nn.net, before.net);
    }

    #[test]
    fn zero_parameters_give_uniform_weights() {
        let mut nn = OnlineNNWeighter::new(4, 0.01, 3);
        nn.net.params_mut().iter_mut().for_each(|p| *p = 0.0);
        assert_eq!(nn.infer(&[5.0, -1.0, 2.0, 0.0]).unwrap(), WeightVector::uniform(4));
    }

    #[test]
    fn parameter_count_matches_layout() {
        for m in 2..6 {
            let nn = OnlineNNWeighter::new(m, 0.01, 0);
            assert_eq!(nn.net.params().len(), m * 4 + 4 + 4 * 4 + 4 + 4 * m + m);
        }
    }

    #[test]
    fn infer_is_pure_and_on_simplex() {
        let nn = OnlineNNWeighter::new(3, 0.01, 5);
        let a = nn.infer(&[0.1, 0.2, 0.3]).unwrap();
        let b = nn.infer(&[0.1, 0.2, 0.3]).unwrap();
        assert_eq!(a, b);
        assert!(a.is_valid());
        assert_eq!(nn.updates, 0);
    }

    #[test]
    fn tiny_step_does_not_increase_loss() {
        let mut rng = rng_for(17, "descent");
        for _ in 0..50 {
            let seed = rng.random();
            let mut nn = OnlineNNWeighter::new(4, 1e-6, seed);
            let preds: Vec<f64> = (0..4).map(|_| StandardNormal.sample(&mut rng)).collect();
            let y: f64 = StandardNormal.sample(&mut rng);
            let (before, _) = nn.loss_and_gradient(&preds, y);
            nn.step(&preds, y).unwrap();
            let (after, _) = nn.loss_and_gradient(&preds, y);
            assert!(after <= before, "{after} > {before}");
        }
    }

    #[test]
    fn static_recovers_exact_model() {
        let mut rng = rng_for(2, "static");
        let truth: Vec<f64> = (0..200).map(|t| (t as f64 * 0.1).sin() * 5.0 + 10.0).collect();
        let noise: Vec<f64> = (0..200)
            .map(|_| 10.0 + 3.0 * { let z: f64 = StandardNormal.sample(&mut rng); z })
            .collect();
        let w = fit_static_weights(&panel(vec![truth.clone(), noise]), &truth).unwrap();
        assert!((w.as_slice()[0] - 1.0).abs() < 0.01, "{w:?}");
    }

    #[test]
    fn static_identical_models_match_single_objective() {
        let truth: Vec<f64> = (0..50).map(|t| t as f64).collect();
        let model: Vec<f64> = truth.iter().map(|y| y + 1.5).collect();
        let p = panel(vec![model.clone(), model]);
        let w = fit_static_weights(&p, &truth).unwrap();
        let single = static_objective(&p, &truth, &[1.0, 0.0]);
        assert_eq!(static_objective(&p, &truth, w.as_slice()), single);
    }

    #[test]
    fn static_rejects_short_panel() {
        let p = panel(vec![vec![1.0], vec![2.0]]);
        assert!(matches!(fit_static_weights(&p, &[1.0]), Err(Error::Contract(_))));
    }

    #[test]
    fn weighter_json_round_trip() {
        let nn = OnlineNNWeighter::new(4, 0.01, 9).with_scaling(3.0, 2.0);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nn.json");
        nn.save(&path).unwrap();
        assert_eq!(OnlineNNWeighter::load(&path).unwrap(), nn);
    }
}
