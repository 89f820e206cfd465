//! Single-layer gated recurrent unit with a linear read-out.
//!
//! Cell (per step, input `x`, previous state `h`):
//!
//! ```text
//! z  = σ(wz x + Uz h + bz)
//! r  = σ(wr x + Ur h + br)
//! n  = tanh(wn x + Un (r ⊙ h) + bn)
//! h' = (1 - z) ⊙ n + z ⊙ h
//! ```
//!
//! The prediction is `wo · h_last + bo` after running over the lag window
//! from a zero state.

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::Scaler;
use crate::error::{Error, Result};
use crate::nn::Adam;
use crate::seed::Rng;

#[derive(Clone, Debug, PartialEq)]
pub struct RecurrentParams {
    pub hidden: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub bptt_window: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GruModel {
    pub hidden: usize,
    /// Steps through which gradients flow back during training.
    pub bptt_window: usize,
    pub scaler: Scaler,
    pub params: Vec<f64>,
}

/// Offsets of each parameter block in the flat vector.
#[derive(Clone, Copy)]
struct Layout {
    h: usize,
}

impl Layout {
    fn wx(&self, gate: usize) -> usize {
        gate * self.h
    }
    fn u(&self, gate: usize) -> usize {
        3 * self.h + gate * self.h * self.h
    }
    fn b(&self, gate: usize) -> usize {
        3 * self.h + 3 * self.h * self.h + gate * self.h
    }
    fn wo(&self) -> usize {
        6 * self.h + 3 * self.h * self.h
    }
    fn bo(&self) -> usize {
        7 * self.h + 3 * self.h * self.h
    }
    fn len(&self) -> usize {
        self.bo() + 1
    }
}

const Z: usize = 0;
const R: usize = 1;
const N: usize = 2;

struct Step {
    x: f64,
    h_prev: Vec<f64>,
    z: Vec<f64>,
    r: Vec<f64>,
    n: Vec<f64>,
    rh: Vec<f64>,
}

pub struct GruTrace {
    steps: Vec<Step>,
    h_last: Vec<f64>,
    pub output: f64,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn gru_param_count(hidden: usize) -> usize {
    Layout { h: hidden }.len()
}

impl GruModel {
    pub fn from_params(hidden: usize, bptt_window: usize, scaler: Scaler, params: Vec<f64>) -> Self {
        assert_eq!(params.len(), gru_param_count(hidden));
        Self {
            hidden,
            bptt_window,
            scaler,
            params,
        }
    }

    fn layout(&self) -> Layout {
        Layout { h: self.hidden }
    }

    /// Runs the cell over already-standardized inputs.
    pub fn forward_scaled(&self, xs: &[f64]) -> GruTrace {
        let lay = self.layout();
        let h_n = self.hidden;
        let p = &self.params;
        let mut h = vec![0.0; h_n];
        let mut steps = Vec::with_capacity(xs.len());
        for &x in xs {
            let gate = |g: usize, state: &[f64], j: usize| -> f64 {
                let u = &p[lay.u(g) + j * h_n..lay.u(g) + (j + 1) * h_n];
                p[lay.wx(g) + j] * x
                    + p[lay.b(g) + j]
                    + u.iter().zip(state).map(|(a, b)| a * b).sum::<f64>()
            };
            let z: Vec<f64> = (0..h_n).map(|j| sigmoid(gate(Z, &h, j))).collect();
            let r: Vec<f64> = (0..h_n).map(|j| sigmoid(gate(R, &h, j))).collect();
            let rh: Vec<f64> = r.iter().zip(&h).map(|(a, b)| a * b).collect();
            let n: Vec<f64> = (0..h_n).map(|j| gate(N, &rh, j).tanh()).collect();
            let h_next: Vec<f64> = (0..h_n).map(|j| (1.0 - z[j]) * n[j] + z[j] * h[j]).collect();
            steps.push(Step {
                x,
                h_prev: std::mem::replace(&mut h, h_next),
                z,
                r,
                n,
                rh,
            });
        }
        let output = p[lay.bo()]
            + p[lay.wo()..lay.wo() + h_n]
                .iter()
                .zip(&h)
                .map(|(a, b)| a * b)
                .sum::<f64>();
        GruTrace {
            steps,
            h_last: h,
            output,
        }
    }

    /// Accumulates the gradient of the loss w.r.t. parameters given
    /// `∂loss/∂output`, truncated to the last `bptt_window` steps.
    pub fn backward(&self, trace: &GruTrace, d_out: f64, grad: &mut [f64]) {
        let lay = self.layout();
        let h_n = self.hidden;
        let p = &self.params;
        grad[lay.bo()] += d_out;
        let mut dh: Vec<f64> = (0..h_n)
            .map(|j| {
                grad[lay.wo() + j] += d_out * trace.h_last[j];
                d_out * p[lay.wo() + j]
            })
            .collect();
        let truncate = trace.steps.len().saturating_sub(self.bptt_window);
        for step in trace.steps[truncate..].iter().rev() {
            let mut dh_prev: Vec<f64> = (0..h_n).map(|j| dh[j] * step.z[j]).collect();
            let mut da_z = vec![0.0; h_n];
            let mut da_n = vec![0.0; h_n];
            for j in 0..h_n {
                let dn = dh[j] * (1.0 - step.z[j]);
                let dz = dh[j] * (step.h_prev[j] - step.n[j]);
                da_n[j] = dn * (1.0 - step.n[j] * step.n[j]);
                da_z[j] = dz * step.z[j] * (1.0 - step.z[j]);
            }
            // candidate: U_n acts on r ⊙ h_prev
            let mut d_rh = vec![0.0; h_n];
            for j in 0..h_n {
                grad[lay.wx(N) + j] += da_n[j] * step.x;
                grad[lay.b(N) + j] += da_n[j];
                for k in 0..h_n {
                    grad[lay.u(N) + j * h_n + k] += da_n[j] * step.rh[k];
                    d_rh[k] += da_n[j] * p[lay.u(N) + j * h_n + k];
                }
            }
            let mut da_r = vec![0.0; h_n];
            for k in 0..h_n {
                dh_prev[k] += d_rh[k] * step.r[k];
                let dr = d_rh[k] * step.h_prev[k];
                da_r[k] = dr * step.r[k] * (1.0 - step.r[k]);
            }
            for (g, da) in [(Z, &da_z), (R, &da_r)] {
                for j in 0..h_n {
                    grad[lay.wx(g) + j] += da[j] * step.x;
                    grad[lay.b(g) + j] += da[j];
                    for k in 0..h_n {
                        grad[lay.u(g) + j * h_n + k] += da[j] * step.h_prev[k];
                        dh_prev[k] += da[j] * p[lay.u(g) + j * h_n + k];
                    }
                }
            }
            dh = dh_prev;
        }
    }

    pub fn fit(
        inputs: &[Vec<f64>],
        targets: &[f64],
        scaler: Scaler,
        params: &RecurrentParams,
        rng: &mut Rng,
    ) -> Result<Self> {
        let count = gru_param_count(params.hidden);
        let bound = 1.0 / (params.hidden as f64).sqrt();
        let init = (0..count).map(|_| rng.random_range(-bound..=bound)).collect();
        let mut model = Self::from_params(params.hidden, params.bptt_window, scaler, init);

        let xs: Vec<Vec<f64>> = inputs.iter().map(|r| model.scaler.forward_all(r)).collect();
        let ys: Vec<f64> = targets.iter().map(|&t| model.scaler.forward(t)).collect();
        let mut adam = Adam::new(count, params.learning_rate);
        let mut order: Vec<usize> = (0..xs.len()).collect();
        let mut grad = vec![0.0; count];
        for _ in 0..params.epochs {
            order.shuffle(rng);
            for batch in order.chunks(params.batch_size) {
                grad.iter_mut().for_each(|g| *g = 0.0);
                let scale = 1.0 / batch.len() as f64;
                for &i in batch {
                    let trace = model.forward_scaled(&xs[i]);
                    model.backward(&trace, 2.0 * (trace.output - ys[i]) * scale, &mut grad);
                }
                adam.step(&mut model.params, &grad);
            }
            if model.params.iter().any(|p| !p.is_finite()) {
                return Err(Error::Numeric {
                    model: "recurrent-net".into(),
                    message: "parameters diverged".into(),
                });
            }
        }
        Ok(model)
    }

    pub fn predict(&self, history: &[f64]) -> f64 {
        let xs = self.scaler.forward_all(history);
        self.scaler.inverse(self.forward_scaled(&xs).output)
    }

    /// Mean squared error in standardized units and its (truncated) gradient.
    pub fn loss_and_gradient(&self, inputs: &[Vec<f64>], targets: &[f64]) -> (f64, Vec<f64>) {
        let mut grad = vec![0.0; self.params.len()];
        let mut loss = 0.0;
        let scale = 1.0 / inputs.len() as f64;
        for (x, &t) in inputs.iter().zip(targets) {
            let trace = self.forward_scaled(&self.scaler.forward_all(x));
            let err = trace.output - self.scaler.forward(t);
            loss += err * err * scale;
            self.backward(&trace, 2.0 * err * scale, &mut grad);
        }
        (loss, grad)
    }
}
