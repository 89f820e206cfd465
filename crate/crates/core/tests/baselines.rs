mod common;

use ensemble_rl::baselines::{
    apply_weights, fit_static_weights, nn_infer, static_objective, OnlineNNWeighter,
};
use ensemble_rl::forecast::ForecastPanel;
use ensemble_rl::seed::{rng_for, Rng};
use ensemble_rl::WeightVector;
use rand::Rng as _;

fn random_panel(rng: &mut Rng, models: usize, len: usize) -> (ForecastPanel, Vec<f64>) {
    let truth: Vec<f64> = (0..len).map(|_| rng.random_range(-1.0..1.0)).collect();
    let predictions = (0..models)
        .map(|_| {
            let bias = rng.random_range(-0.5..0.5);
            let noise = rng.random_range(0.1..1.0);
            truth
                .iter()
                .map(|y| y + bias + noise * rng.random_range(-1.0..1.0))
                .collect()
        })
        .collect();
    let panel = ForecastPanel {
        predictions,
        model_names: (0..models).map(|i| format!("m{i}")).collect(),
        time_indices: (1..=len).collect(),
    };
    (panel, truth)
}

#[test]
fn static_weights_match_two_model_grid_search() {
    let mut rng = rng_for(31, "static-grid-2");
    for _ in 0..10 {
        let (panel, truth) = random_panel(&mut rng, 2, 30);
        let w = fit_static_weights(&panel, &truth).unwrap();
        let got = static_objective(&panel, &truth, w.as_slice());
        let best = (0..=1000)
            .map(|k| {
                let a = k as f64 / 1000.0;
                static_objective(&panel, &truth, &[a, 1.0 - a])
            })
            .fold(f64::INFINITY, f64::min);
        assert!(got <= best + 1e-6, "{got} vs grid {best}");
    }
}

#[test]
fn static_weights_match_three_model_grid_search() {
    let mut rng = rng_for(32, "static-grid-3");
    for _ in 0..5 {
        let (panel, truth) = random_panel(&mut rng, 3, 30);
        let w = fit_static_weights(&panel, &truth).unwrap();
        let got = static_objective(&panel, &truth, w.as_slice());
        let steps = 400;
        let mut best = f64::INFINITY;
        for i in 0..=steps {
            for j in 0..=steps - i {
                let a = i as f64 / steps as f64;
                let b = j as f64 / steps as f64;
                best = best.min(static_objective(&panel, &truth, &[a, b, 1.0 - a - b]));
            }
        }
        assert!(got <= best + 1e-6, "{got} vs grid {best}");
    }
}

#[test]
fn static_weights_beat_uniform_and_every_corner() {
    let mut rng = rng_for(33, "static-corners");
    for m in 2..=5 {
        let (panel, truth) = random_panel(&mut rng, m, 50);
        let w = fit_static_weights(&panel, &truth).unwrap();
        let got = static_objective(&panel, &truth, w.as_slice());
        let uniform = WeightVector::uniform(m);
        assert!(got <= static_objective(&panel, &truth, uniform.as_slice()) + 1e-12);
        for i in 0..m {
            let corner = WeightVector::one_hot(m, i);
            assert!(got <= static_objective(&panel, &truth, corner.as_slice()) + 1e-12);
        }
        let combined = apply_weights(&w, &panel).unwrap();
        assert_eq!(combined.len(), 50);
    }
}

#[test]
fn static_weights_find_the_exact_model() {
    let mut rng = rng_for(34, "static-exact");
    let truth: Vec<f64> = (0..100).map(|_| rng.random_range(-1.0..1.0)).collect();
    let noise: Vec<f64> = (0..100).map(|_| rng.random_range(-1.0..1.0)).collect();
    let panel = ForecastPanel {
        predictions: vec![truth.clone(), noise],
        model_names: vec!["exact".into(), "noise".into()],
        time_indices: (1..=100).collect(),
    };
    let w = fit_static_weights(&panel, &truth).unwrap();
    assert!((w.as_slice()[0] - 1.0).abs() < 0.01, "{w:?}");
}

#[test]
fn online_nn_gradient_matches_finite_differences() {
    for (case, err) in common::online_nn_gradient_errors(60).into_iter().enumerate() {
        assert!(err < 1e-4, "case {case}: relative error {err}");
    }
}

#[test]
fn frozen_weighter_makes_no_updates() {
    let mut rng = rng_for(37, "nn-frozen");
    let weighter = OnlineNNWeighter::new(4, 0.01, 1);
    let before = weighter.clone();
    for _ in 0..20 {
        let predictions: Vec<f64> = (0..4).map(|_| rng.random_range(5.0..15.0)).collect();
        let w = nn_infer(&weighter, &predictions).unwrap();
        assert!(w.is_valid());
        assert_eq!(w, nn_infer(&weighter, &predictions).unwrap());
    }
    assert_eq!(weighter, before);
    assert_eq!(weighter.updates, 0);
}
