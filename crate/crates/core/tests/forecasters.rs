mod common;

use ensemble_rl::forecast::{
    build_panel, fit, gru_param_count, lag_windows, ArModel, Forest, Forecaster,
    GruModel, Model, Scaler, TreeParams,
};
use ensemble_rl::seed::rng_for;
use ensemble_rl::{Error, ForecasterKind, ForecasterSpec, TimeSeries};
use rand::Rng as _;

fn ar_forecaster(name: &str, coefficients: Vec<f64>) -> Forecaster {
    let lag = coefficients.len();
    Forecaster {
        name: name.into(),
        spec: ForecasterSpec::new(ForecasterKind::ArLeastSquares)
            .with_lag(lag)
            .named(name),
        model: Model::Ar(ArModel {
            coefficients,
            intercept: 0.0,
        }),
    }
}

#[test]
fn ar_recovers_a_line() {
    // y_t = 2 y_{t-1} - y_{t-2} holds exactly on any straight line.
    let line: Vec<f64> = (0..50).map(|t| 3.0 + 0.5 * t as f64).collect();
    let (x, y) = lag_windows(&[&line], 2);
    let m = ArModel::fit(&x, &y, false).unwrap();
    assert!((m.coefficients[0] - 2.0).abs() < 1e-8, "{:?}", m.coefficients);
    assert!((m.coefficients[1] + 1.0).abs() < 1e-8, "{:?}", m.coefficients);
}

#[test]
fn ar_recovers_noiseless_coefficients() {
    let mut rng = rng_for(7, "ar-recovery");
    for lag in 1..=6 {
        // Stable random process: small coefficients and a random start.
        let truth: Vec<f64> = (0..lag).map(|_| rng.random_range(-0.8..0.8) / lag as f64).collect();
        let mut series: Vec<f64> = (0..lag).map(|_| rng.random_range(-1.0..1.0)).collect();
        for t in lag..300 {
            let shock = if t % 17 == 0 { 1.0 } else { 0.0 };
            let next: f64 = (0..lag).map(|k| truth[k] * series[t - 1 - k]).sum::<f64>() + shock;
            series.push(next);
        }
        // Fit only on windows whose target has no shock.
        let (x, y) = lag_windows(&[&series], lag);
        let keep: Vec<usize> = (0..y.len()).filter(|i| (i + lag) % 17 != 0).collect();
        let x: Vec<Vec<f64>> = keep.iter().map(|&i| x[i].clone()).collect();
        let y: Vec<f64> = keep.iter().map(|&i| y[i]).collect();
        let m = ArModel::fit(&x, &y, false).unwrap();
        for (a, b) in m.coefficients.iter().zip(&truth) {
            assert!((a - b).abs() < 1e-6, "lag {lag}: {:?} vs {truth:?}", m.coefficients);
        }
    }
}

#[test]
fn ar_prediction_example_and_purity() {
    let f = ar_forecaster("ar", vec![2.0, -1.0]);
    assert_eq!(f.predict_next(&[4.0, 5.0]).unwrap(), 6.0);
    assert_eq!(f.predict_next(&[4.0, 5.0]).unwrap(), 6.0);
    assert!(matches!(f.predict_next(&[5.0]), Err(Error::Contract(_))));
    assert!(matches!(f.predict_next(&[f64::NAN, 5.0]), Err(Error::Contract(_))));
}

#[test]
fn feedforward_learns_a_constant() {
    let series = vec![4.0; 200];
    let spec = ForecasterSpec::new(ForecasterKind::FeedforwardNet).with_lag(3);
    let f = fit(&spec, &[&series]).unwrap();
    let p = f.predict_next(&[4.0, 4.0, 4.0]).unwrap();
    assert!((p - 4.0).abs() < 1e-3, "{p}");
    let Model::Feedforward(m) = &f.model else { panic!() };
    let (x, y) = lag_windows(&[&series], 3);
    let (loss, _) = m.loss_and_gradient(&x, &y);
    assert!(loss < 1e-6, "{loss}");
}

#[test]
fn single_unbootstrapped_stump_predicts_the_mean() {
    let mut rng = rng_for(1, "trees");
    let x: Vec<Vec<f64>> = (0..40).map(|i| vec![i as f64, (i * 7 % 13) as f64]).collect();
    let y: Vec<f64> = (0..40).map(|i| (i as f64).sin()).collect();
    let params = TreeParams {
        trees: 1,
        max_depth: 0,
        min_leaf: 1,
        bootstrap: false,
    };
    let forest = Forest::fit(&x, &y, &params, &mut rng);
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    assert!((forest.predict(&[3.0, 1.0]) - mean).abs() < 1e-12);
}

#[test]
fn trees_ignore_row_order() {
    let x: Vec<Vec<f64>> = (0..60).map(|i| vec![(i * 11 % 29) as f64, (i % 5) as f64]).collect();
    let y: Vec<f64> = x.iter().map(|r| r[0] * 0.3 - r[1]).collect();
    let params = TreeParams {
        trees: 5,
        max_depth: 4,
        min_leaf: 2,
        bootstrap: true,
    };
    let a = Forest::fit(&x, &y, &params, &mut rng_for(3, "t"));
    let (xr, yr): (Vec<_>, Vec<_>) = x.iter().cloned().zip(y.iter().copied()).rev().unzip();
    let b = Forest::fit(&xr, &yr, &params, &mut rng_for(3, "t"));
    assert_eq!(a, b);
}

/// Independent GRU forward pass written from the cell equations.
fn gru_oracle(hidden: usize, p: &[f64], xs: &[f64]) -> f64 {
    let h_n = hidden;
    let wx = |g: usize, j: usize| p[g * h_n + j];
    let u = |g: usize, j: usize, k: usize| p[3 * h_n + g * h_n * h_n + j * h_n + k];
    let b = |g: usize, j: usize| p[3 * h_n + 3 * h_n * h_n + g * h_n + j];
    let wo = |j: usize| p[6 * h_n + 3 * h_n * h_n + j];
    let bo = p[7 * h_n + 3 * h_n * h_n];
    let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
    let mut h = vec![0.0; h_n];
    for &x in xs {
        let pre = |g: usize, j: usize, s: &[f64]| {
            wx(g, j) * x + b(g, j) + (0..h_n).map(|k| u(g, j, k) * s[k]).sum::<f64>()
        };
        let z: Vec<f64> = (0..h_n).map(|j| sig(pre(0, j, &h))).collect();
        let r: Vec<f64> = (0..h_n).map(|j| sig(pre(1, j, &h))).collect();
        let rh: Vec<f64> = (0..h_n).map(|j| r[j] * h[j]).collect();
        let n: Vec<f64> = (0..h_n).map(|j| pre(2, j, &rh).tanh()).collect();
        h = (0..h_n).map(|j| (1.0 - z[j]) * n[j] + z[j] * h[j]).collect();
    }
    bo + (0..h_n).map(|j| wo(j) * h[j]).sum::<f64>()
}

#[test]
fn gru_forward_matches_hand_coded_cell() {
    let mut rng = rng_for(11, "gru-forward");
    for hidden in 1..=3 {
        for _ in 0..20 {
            let params: Vec<f64> = (0..gru_param_count(hidden))
                .map(|_| rng.random_range(-1.0..1.0))
                .collect();
            let xs: Vec<f64> = (0..5).map(|_| rng.random_range(-2.0..2.0)).collect();
            let m = GruModel::from_params(hidden, 5, Scaler::identity(), params.clone());
            let got = m.forward_scaled(&xs).output;
            let want = gru_oracle(hidden, &params, &xs);
            assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        }
    }
}

#[test]
fn gru_with_zero_input_weights_ignores_history() {
    let hidden = 2;
    let mut rng = rng_for(12, "gru-zero");
    let mut params: Vec<f64> = (0..gru_param_count(hidden))
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    params[..3 * hidden].fill(0.0);
    let m = GruModel::from_params(hidden, 4, Scaler::identity(), params.clone());
    let a = m.forward_scaled(&[1.0, 2.0, 3.0, 4.0]).output;
    let b = m.forward_scaled(&[-9.0, 0.5, 7.0, 0.0]).output;
    assert_eq!(a, b);
    assert!((a - gru_oracle(hidden, &params, &[0.0; 4])).abs() < 1e-12);
}

#[test]
fn too_little_data_is_a_training_error() {
    let short = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
    for kind in [
        ForecasterKind::ArLeastSquares,
        ForecasterKind::FeedforwardNet,
        ForecasterKind::RecurrentNet,
        ForecasterKind::BaggedTrees,
    ] {
        let spec = ForecasterSpec::new(kind).with_lag(5);
        assert!(matches!(fit(&spec, &[&short]), Err(Error::Training { .. })), "{kind:?}");
    }
}

#[test]
fn fitted_models_are_deterministic_per_seed() {
    let series: Vec<f64> = (0..300).map(|t| 10.0 + (t as f64 * 0.3).sin()).collect();
    for kind in [
        ForecasterKind::FeedforwardNet,
        ForecasterKind::RecurrentNet,
        ForecasterKind::BaggedTrees,
    ] {
        let mut spec = ForecasterSpec::new(kind).with_seed(9);
        if kind != ForecasterKind::BaggedTrees {
            spec = spec.with("epochs", 5.0);
        }
        let a = fit(&spec, &[&series]).unwrap();
        let b = fit(&spec, &[&series]).unwrap();
        assert_eq!(a, b, "{kind:?}");
    }
}

#[test]
fn panel_over_observed_indices_equals_direct_predictions() {
    let values: Vec<f64> = (0..30).map(|t| (t as f64 * 0.4).cos() + 3.0).collect();
    let series = TimeSeries::new(values.clone(), 1).unwrap();
    let models = vec![ar_forecaster("a", vec![0.5, 0.3]), ar_forecaster("b", vec![1.0, 0.0, -0.2])];
    let indices: Vec<usize> = (4..=30).collect();
    let panel = build_panel(&models, &series, &indices).unwrap();
    assert_eq!(panel.models(), 2);
    assert_eq!(panel.len(), indices.len());
    for (pos, &t) in indices.iter().enumerate() {
        for (m, f) in models.iter().enumerate() {
            let lag = f.lag_order();
            // Values are 1-based: index t is values[t - 1].
            let history = &values[t - 1 - lag..t - 1];
            assert_eq!(panel.predictions[m][pos], f.predict_next(history).unwrap());
        }
    }
}

#[test]
fn panel_fills_missing_lags_with_own_predictions() {
    let values = vec![1.0, 2.0, 4.0, 0.0, 0.0, 7.0];
    let series = TimeSeries::with_missing(values, 1, vec![ensemble_rl::IndexRange::new(4, 5)]).unwrap();
    let models = vec![ar_forecaster("a", vec![1.0]), ar_forecaster("b", vec![0.5, 0.5])];
    let panel = build_panel(&models, &series, &[4, 5, 6]).unwrap();
    // a: y4 = y3 = 4, y5 = ŷ4 = 4, y6 = ŷ5 = 4
    assert_eq!(panel.row(0), &[4.0, 4.0, 4.0]);
    // b: y4 = (2+4)/2 = 3, y5 = (4+3)/2 = 3.5, y6 = (3+3.5)/2 = 3.25
    assert_eq!(panel.row(1), &[3.0, 3.5, 3.25]);
}

#[test]
fn feedforward_gradient_matches_finite_differences() {
    for (case, err) in common::feedforward_gradient_errors(60).into_iter().enumerate() {
        assert!(err < 1e-4, "case {case}: relative error {err}");
    }
}

#[test]
fn recurrent_gradient_matches_finite_differences() {
    for (case, err) in common::recurrent_gradient_errors(60).into_iter().enumerate() {
        assert!(err < 1e-4, "case {case}: relative error {err}");
    }
}

#[test]
fn recurrent_truncation_drops_early_steps_only() {
    let hidden = 2;
    let mut rng = rng_for(23, "rnn-window");
    let params: Vec<f64> = (0..gru_param_count(hidden))
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    let x: Vec<Vec<f64>> = (0..2).map(|_| (0..4).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
    let y: Vec<f64> = (0..2).map(|_| rng.random_range(-2.0..2.0)).collect();
    let full = GruModel::from_params(hidden, 4, Scaler::identity(), params.clone());
    let short = GruModel::from_params(hidden, 1, Scaler::identity(), params);
    let (lf, gf) = full.loss_and_gradient(&x, &y);
    let (ls, gs) = short.loss_and_gradient(&x, &y);
    assert_eq!(lf, ls);
    // Output-layer gradients do not depend on the window.
    let out = 6 * hidden + 3 * hidden * hidden;
    assert_eq!(&gf[out..], &gs[out..]);
    assert_ne!(gf, gs);
}
