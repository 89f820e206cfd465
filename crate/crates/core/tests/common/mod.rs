//! Helpers shared by the integration test targets.

#![allow(dead_code)]

/// Largest relative error between an analytic gradient and a five-point
/// central difference. Components below the stencil's resolution are
/// compared against a floor of `1e-6 · max(1, |loss|)`.
pub fn gradient_error(analytic: &[f64], params: &[f64], loss: impl Fn(&[f64]) -> f64) -> f64 {
    let h = 1e-4;
    let floor = 1e-6 * loss(params).abs().max(1.0);
    let mut p = params.to_vec();
    let mut worst: f64 = 0.0;
    for i in 0..p.len() {
        let mut at = |d: f64| {
            p[i] = params[i] + d;
            let v = loss(&p);
            p[i] = params[i];
            v
        };
        let numeric = (-at(2.0 * h) + 8.0 * at(h) - 8.0 * at(-h) + at(-2.0 * h)) / (12.0 * h);
        let denom = analytic[i].abs().max(numeric.abs()).max(floor);
        worst = worst.max((analytic[i] - numeric).abs() / denom);
    }
    worst
}

use ensemble_rl::baselines::OnlineNNWeighter;
use ensemble_rl::forecast::{gru_param_count, FeedforwardModel, GruModel, Scaler};
use ensemble_rl::nn::{param_count, Mlp};
use ensemble_rl::seed::{rng_for, Rng};
use rand::Rng as _;

fn random_batch(rng: &mut Rng, lag: usize, n: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
    let x = (0..n)
        .map(|_| (0..lag).map(|_| rng.random_range(-2.0..2.0)).collect())
        .collect();
    let y = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
    (x, y)
}

/// Worst relative gradient error of each of `cases` random small
/// feedforward forecasters.
pub fn feedforward_gradient_errors(cases: usize) -> Vec<f64> {
    let mut rng = rng_for(21, "ff-gradcheck");
    (0..cases)
        .map(|case| {
            let lag = 1 + case % 3;
            let sizes = [lag, 1 + case % 3, 1 + (case / 3) % 2, 1];
            let params: Vec<f64> = (0..param_count(&sizes)).map(|_| rng.random_range(-1.0..1.0)).collect();
            let scaler = Scaler {
                mean: rng.random_range(-1.0..1.0),
                std: rng.random_range(0.5..2.0),
            };
            let (x, y) = random_batch(&mut rng, lag, 4);
            let model = |p: &[f64]| FeedforwardModel {
                scaler,
                net: Mlp::from_params(&sizes, p.to_vec()).unwrap(),
            };
            let (_, grad) = model(&params).loss_and_gradient(&x, &y);
            gradient_error(&grad, &params, |p| model(p).loss_and_gradient(&x, &y).0)
        })
        .collect()
}

/// Same for random small recurrent forecasters. The backpropagation window
/// spans the whole input so the truncated gradient is the exact one.
pub fn recurrent_gradient_errors(cases: usize) -> Vec<f64> {
    let mut rng = rng_for(22, "rnn-gradcheck");
    (0..cases)
        .map(|case| {
            let hidden = 1 + case % 2;
            let lag = 2 + case % 3;
            let params: Vec<f64> = (0..gru_param_count(hidden))
                .map(|_| rng.random_range(-1.0..1.0))
                .collect();
            let (x, y) = random_batch(&mut rng, lag, 3);
            let model = |p: &[f64]| GruModel::from_params(hidden, lag, Scaler::identity(), p.to_vec());
            let (_, grad) = model(&params).loss_and_gradient(&x, &y);
            gradient_error(&grad, &params, |p| model(p).loss_and_gradient(&x, &y).0)
        })
        .collect()
}

/// Same for the online weighting network on random 4-model inputs.
pub fn online_nn_gradient_errors(cases: usize) -> Vec<f64> {
    let mut rng = rng_for(35, "nn-gradcheck");
    (0..cases)
        .map(|case| {
            let mut weighter = OnlineNNWeighter::new(4, 0.01, case as u64)
                .with_scaling(rng.random_range(-2.0..2.0), rng.random_range(0.5..3.0));
            // Larger than the initializer so the tanh units are not linear.
            for p in weighter.net.params_mut() {
                *p = rng.random_range(-1.0..1.0);
            }
            let predictions: Vec<f64> = (0..4).map(|_| rng.random_range(-3.0..3.0)).collect();
            let truth = rng.random_range(-3.0..3.0);
            let (_, grad) = weighter.loss_and_gradient(&predictions, truth);
            let sizes = weighter.net.sizes().to_vec();
            gradient_error(&grad, weighter.net.params(), |p| {
                let mut w = weighter.clone();
                w.net = Mlp::from_params(&sizes, p.to_vec()).unwrap();
                w.loss_and_gradient(&predictions, truth).0
            })
        })
        .collect()
}
