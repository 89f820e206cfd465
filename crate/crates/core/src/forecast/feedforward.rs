use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::Scaler;
use crate::error::{Error, Result};
use crate::nn::{Adam, Mlp};
use crate::seed::Rng;

#[derive(Clone, Debug, PartialEq)]
pub struct FeedforwardParams {
    pub hidden: [usize; 2],
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
}

/// Two tanh hidden layers on standardized lag features.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeedforwardModel {
    pub scaler: Scaler,
    pub net: Mlp,
}

impl FeedforwardModel {
    pub fn fit(
        inputs: &[Vec<f64>],
        targets: &[f64],
        scaler: Scaler,
        params: &FeedforwardParams,
        rng: &mut Rng,
    ) -> Result<Self> {
        let lag = inputs[0].len();
        let sizes = [lag, params.hidden[0], params.hidden[1], 1];
        let mut net = Mlp::init_scaled(&sizes, 1.0, rng);
        let xs: Vec<Vec<f64>> = inputs.iter().map(|r| scaler.forward_all(r)).collect();
        let ys: Vec<f64> = targets.iter().map(|&t| scaler.forward(t)).collect();

        let mut adam = Adam::new(net.params().len(), params.learning_rate);
        let mut order: Vec<usize> = (0..xs.len()).collect();
        let mut grad = vec![0.0; net.params().len()];
        for _ in 0..params.epochs {
            order.shuffle(rng);
            for batch in order.chunks(params.batch_size) {
                grad.iter_mut().for_each(|g| *g = 0.0);
                let scale = 1.0 / batch.len() as f64;
                for &i in batch {
                    let trace = net.forward(&xs[i]);
                    let err = trace.output()[0] - ys[i];
                    net.backward(&trace, &[2.0 * err * scale], &mut grad);
                }
                adam.step(net.params_mut(), &grad);
            }
            if net.params().iter().any(|p| !p.is_finite()) {
                return Err(Error::Numeric {
                    model: "feedforward-net".into(),
                    message: "parameters diverged".into(),
                });
            }
        }
        Ok(Self { scaler, net })
    }

    pub fn predict(&self, history: &[f64]) -> f64 {
        let x = self.scaler.forward_all(history);
        self.scaler.inverse(self.net.predict(&x)[0])
    }

    /// Mean squared error in standardized units and its parameter gradient.
    pub fn loss_and_gradient(&self, inputs: &[Vec<f64>], targets: &[f64]) -> (f64, Vec<f64>) {
        let mut grad = vec![0.0; self.net.params().len()];
        let mut loss = 0.0;
        let scale = 1.0 / inputs.len() as f64;
        for (x, &t) in inputs.iter().zip(targets) {
            let trace = self.net.forward(&self.scaler.forward_all(x));
            let err = trace.output()[0] - self.scaler.forward(t);
            loss += err * err * scale;
            self.net.backward(&trace, &[2.0 * err * scale], &mut grad);
        }
        (loss, grad)
    }
}
