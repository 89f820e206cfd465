//! Reinforcement-learning weight controller.
//!
//! The state is the ensemble's squared prediction error relative to `y²`,
//! in percent, clamped to `[0, 100]` and cut into `n` equal buckets. The
//! action is a weight vector on the simplex. The reward is the decrease in
//! error between consecutive instants.
//!
//! Because the bucketed state set is finite, the learner is an exact
//! tabular actor-critic: one critic value and one row of actor logits per
//! bucket. Exploration adds Gaussian noise to the logits before the
//! softmax, and the actor follows the score-function gradient of that
//! Gaussian, scaled by the TD error.

mod episodes;

use std::path::Path;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

pub use episodes::{
    episode_csv, export_episode_csv, infer_online, train_episodic, EpisodeLog, Feedback, InferenceOptions,
    InferenceOutcome, StepRecord, TrainingOptions,
};

use crate::combiner::{combine, from_logits, WeightVector};
use crate::error::{Error, Result};
use crate::seed::Rng;

pub const DEFAULT_EPSILON_Y: f64 = 1e-8;

/// Bucketed error state.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorState {
    /// Clamped relative squared error in percent.
    pub raw: f64,
    pub bucket: usize,
    /// Lower bound of the bucket's interval.
    pub bucket_lb: f64,
}

impl ErrorState {
    /// Buckets are lower-inclusive and upper-exclusive; 100 lands in the top bucket.
    pub fn from_raw(raw: f64, buckets: usize) -> Self {
        assert!(buckets > 0);
        let raw = if raw.is_nan() { 100.0 } else { raw.clamp(0.0, 100.0) };
        let width = 100.0 / buckets as f64;
        let bucket = ((raw / width).floor() as usize).min(buckets - 1);
        Self {
            raw,
            bucket,
            bucket_lb: bucket as f64 * width,
        }
    }
}

/// Relative squared error of the weighted prediction, in percent and clamped.
pub fn compute_state(
    true_value: f64,
    weights: &WeightVector,
    predictions: &[f64],
    buckets: usize,
) -> Result<ErrorState> {
    compute_state_eps(true_value, weights, predictions, buckets, DEFAULT_EPSILON_Y)
}

pub fn compute_state_eps(
    true_value: f64,
    weights: &WeightVector,
    predictions: &[f64],
    buckets: usize,
    epsilon_y: f64,
) -> Result<ErrorState> {
    if buckets == 0 {
        return Err(Error::Parameter("bucket count must be positive".into()));
    }
    if true_value.abs() < epsilon_y {
        return Err(Error::DegenerateDenominator {
            value: true_value,
            epsilon: epsilon_y,
        });
    }
    let combined = combine(weights, predictions)?;
    let raw = (true_value - combined).powi(2) / true_value.powi(2) * 100.0;
    Ok(ErrorState::from_raw(raw, buckets))
}

/// Substitute state when `|y|` is degenerate: squared error relative to the
/// series variance, in percent.
pub fn fallback_state(
    true_value: f64,
    weights: &WeightVector,
    predictions: &[f64],
    buckets: usize,
    variance: f64,
) -> Result<ErrorState> {
    let combined = combine(weights, predictions)?;
    let raw = (true_value - combined).powi(2) / variance.max(f64::MIN_POSITIVE) * 100.0;
    Ok(ErrorState::from_raw(raw, buckets))
}

/// Alternative reward definitions. Only [`RewardForm::Decrease`] is used by default.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RewardForm {
    /// `S_{t-1} - S_t`
    #[default]
    Decrease,
    /// `1 / |S_t|`
    InverseError,
    /// `1 / |S_t - S_{t-1}|`
    InverseChange,
}

/// Floor applied to denominators of the inverse reward forms.
const INVERSE_FLOOR: f64 = 1e-3;

/// One reward with the discount it is accumulated under.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardSignal {
    pub value: f64,
    pub discount: f64,
}

/// `prev.raw - curr.raw`
pub fn compute_reward(prev: &ErrorState, curr: &ErrorState) -> f64 {
    prev.raw - curr.raw
}

pub fn reward_with(form: RewardForm, prev: &ErrorState, curr: &ErrorState) -> f64 {
    match form {
        RewardForm::Decrease => compute_reward(prev, curr),
        RewardForm::InverseError => 1.0 / curr.raw.abs().max(INVERSE_FLOOR),
        RewardForm::InverseChange => 1.0 / (curr.raw - prev.raw).abs().max(INVERSE_FLOOR),
    }
}

/// `Σ_k γ^k r_k` over the given horizon.
pub fn compute_return(rewards: &[f64], discount: f64) -> f64 {
    // Horner form from the end keeps γ = 0 exact.
    rewards.iter().rev().fold(0.0, |acc, r| r + discount * acc)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ActionMode {
    Explore,
    Exploit,
}

/// Logit perturbation applied when the action was chosen.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActionNoise {
    pub noise: Vec<f64>,
    pub std: f64,
}

impl ActionNoise {
    pub fn none(models: usize) -> Self {
        Self {
            noise: vec![0.0; models],
            std: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Transition<'a> {
    pub state: usize,
    pub noise: &'a ActionNoise,
    pub reward: f64,
    pub next_state: usize,
    pub terminal: bool,
}

/// Hyperparameters of the controller. Defaults: 10 buckets, γ = 0.9,
/// actor rate 0.05, critic rate 0.1, σ_e = 0.5 · 0.97^e.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RlConfig {
    pub buckets: usize,
    pub discount: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub initial_std: f64,
    pub std_decay: f64,
    pub episodes: usize,
    pub epsilon_y: f64,
    pub reward: RewardForm,
}

impl Default for RlConfig {
    fn default() -> Self {
        Self {
            buckets: 10,
            discount: 0.9,
            actor_lr: 0.05,
            critic_lr: 0.1,
            initial_std: 0.5,
            std_decay: 0.97,
            episodes: 100,
            epsilon_y: DEFAULT_EPSILON_Y,
            reward: RewardForm::Decrease,
        }
    }
}

impl RlConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Parameter(m));
        if self.buckets == 0 {
            return fail("rl.buckets must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.discount) {
            return fail(format!("rl.discount {} outside [0, 1]", self.discount));
        }
        for (name, v) in [("actor_lr", self.actor_lr), ("critic_lr", self.critic_lr)] {
            if !(0.0..=1.0).contains(&v) {
                return fail(format!("rl.{name} {v} outside [0, 1]"));
            }
        }
        if !(self.initial_std >= 0.0 && self.initial_std.is_finite()) {
            return fail(format!("rl.initial_std {} must be >= 0", self.initial_std));
        }
        if !(self.std_decay > 0.0 && self.std_decay <= 1.0) {
            return fail(format!("rl.std_decay {} outside (0, 1]", self.std_decay));
        }
        if self.episodes == 0 {
            return fail("rl.episodes must be at least 1".into());
        }
        if !(self.epsilon_y > 0.0) {
            return fail("rl.epsilon_y must be positive".into());
        }
        Ok(())
    }
}

/// Per-bucket actor logits and critic values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyModel {
    pub buckets: usize,
    pub models: usize,
    /// `buckets × models`
    pub actor_logits: Vec<Vec<f64>>,
    pub critic_values: Vec<f64>,
    pub exploration_std: f64,
    pub initial_std: f64,
    pub std_decay: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub discount: f64,
    pub episodes_completed: usize,
}

impl PolicyModel {
    /// Zero logits (uniform weights) and zero values.
    pub fn new(models: usize, config: &RlConfig) -> Self {
        Self {
            buckets: config.buckets,
            models,
            actor_logits: vec![vec![0.0; models]; config.buckets],
            critic_values: vec![0.0; config.buckets],
            exploration_std: config.initial_std,
            initial_std: config.initial_std,
            std_decay: config.std_decay,
            actor_lr: config.actor_lr,
            critic_lr: config.critic_lr,
            discount: config.discount,
            episodes_completed: 0,
        }
    }

    pub fn exploit(&self, bucket: usize) -> WeightVector {
        from_logits(&self.actor_logits[bucket]).expect("finite logits")
    }

    pub fn select_action(
        &self,
        state: &ErrorState,
        mode: ActionMode,
        rng: &mut Rng,
    ) -> (WeightVector, ActionNoise) {
        let logits = &self.actor_logits[state.bucket];
        let std = self.exploration_std;
        if mode == ActionMode::Exploit || std == 0.0 {
            return (self.exploit(state.bucket), ActionNoise::none(self.models));
        }
        let normal = Normal::new(0.0, std).expect("finite std");
        let noise: Vec<f64> = (0..self.models).map(|_| normal.sample(rng)).collect();
        let perturbed: Vec<f64> = logits.iter().zip(&noise).map(|(l, g)| l + g).collect();
        (
            from_logits(&perturbed).expect("finite logits"),
            ActionNoise { noise, std },
        )
    }

    /// One-step actor-critic update; returns the TD error.
    pub fn td_update(&mut self, t: &Transition<'_>) -> f64 {
        let bootstrap = if t.terminal {
            0.0
        } else {
            self.discount * self.critic_values[t.next_state]
        };
        let delta = t.reward + bootstrap - self.critic_values[t.state];
        self.critic_values[t.state] += self.critic_lr * delta;
        if t.noise.std > 0.0 {
            let scale = self.actor_lr * delta / (t.noise.std * t.noise.std);
            for (theta, g) in self.actor_logits[t.state].iter_mut().zip(&t.noise.noise) {
                *theta += scale * g;
            }
        }
        delta
    }

    /// Advances the exploration schedule after an episode.
    pub fn finish_episode(&mut self) {
        self.episodes_completed += 1;
        self.exploration_std = self.initial_std * self.std_decay.powi(self.episodes_completed as i32);
    }

    pub fn is_finite(&self) -> bool {
        self.actor_logits.iter().flatten().all(|v| v.is_finite())
            && self.critic_values.iter().all(|v| v.is_finite())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text =
            serde_json::to_string_pretty(self).map_err(|e| Error::json("serializing policy", e))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let policy: Self =
            serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), e))?;
        if policy.actor_logits.len() != policy.buckets
            || policy.actor_logits.iter().any(|r| r.len() != policy.models)
            || policy.critic_values.len() != policy.buckets
        {
            return Err(Error::Structure(format!(
                "{}: policy dimensions do not match buckets/models",
                path.display()
            )));
        }
        Ok(policy)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_for;
    use proptest::prelude::*;

    #[test]
    fn state_examples() {
        let w = WeightVector::one_hot(2, 0);
        let s = compute_state(10.0, &w, &[10.0, 3.0], 10).unwrap();
        assert_eq!((s.raw, s.bucket), (0.0, 0));
        let s = compute_state(10.0, &w, &[5.0, 3.0], 10).unwrap();
        assert_eq!((s.raw, s.bucket, s.bucket_lb), (25.0, 2, 20.0));
        // (10 - (-10))² / 10² · 100 = 400, clamped
        let s = compute_state(10.0, &w, &[-10.0, 3.0], 10).unwrap();
        assert_eq!((s.raw, s.bucket), (100.0, 9));
    }

    #[test]
    fn degenerate_denominator_is_reported() {
        let w = WeightVector::uniform(2);
        let err = compute_state(1e-9, &w, &[1.0, 1.0], 10).unwrap_err();
        assert!(matches!(err, Error::DegenerateDenominator { .. }));
        let s = fallback_state(0.0, &w, &[1.0, 1.0], 10, 4.0).unwrap();
        assert_eq!(s.raw, 25.0);
    }

    #[test]
    fn bucket_boundaries_are_lower_inclusive() {
        assert_eq!(ErrorState::from_raw(10.0, 10).bucket, 1);
        assert_eq!(ErrorState::from_raw(9.999_999, 10).bucket, 0);
        assert_eq!(ErrorState::from_raw(100.0, 10).bucket, 9);
        assert_eq!(ErrorState::from_raw(0.0, 1).bucket, 0);
    }

    #[test]
    fn reward_examples() {
        let s = |raw| ErrorState::from_raw(raw, 10);
        assert_eq!(compute_reward(&s(30.0), &s(10.0)), 20.0);
        assert_eq!(compute_reward(&s(42.0), &s(42.0)), 0.0);
        assert_eq!(compute_reward(&s(0.0), &s(100.0)), -100.0);
    }

    #[test]
    fn return_examples() {
        assert_eq!(compute_return(&[1.0, 1.0, 1.0], 0.0), 1.0);
        assert_eq!(compute_return(&[1.0, 1.0, 1.0], 0.5), 1.75);
        assert_eq!(compute_return(&[-3.5], 0.7), -3.5);
    }

    #[test]
    fn exploit_of_zero_logits_is_uniform() {
        let policy = PolicyModel::new(4, &RlConfig::default());
        let mut rng = rng_for(0, "t");
        let (w, noise) = policy.select_action(&ErrorState::from_raw(5.0, 10), ActionMode::Exploit, &mut rng);
        assert_eq!(w, WeightVector::uniform(4));
        assert_eq!(noise.std, 0.0);
    }

    #[test]
    fn explore_without_noise_equals_exploit() {
        let mut policy = PolicyModel::new(3, &RlConfig::default());
        policy.actor_logits[2] = vec![0.3, -1.0, 2.0];
        policy.exploration_std = 0.0;
        let s = ErrorState::from_raw(25.0, 10);
        let mut rng = rng_for(0, "t");
        let (a, _) = policy.select_action(&s, ActionMode::Explore, &mut rng);
        let (b, _) = policy.select_action(&s, ActionMode::Exploit, &mut rng);
        assert_eq!(a, b);
    }

    #[test]
    fn explore_is_deterministic_per_seed() {
        let policy = PolicyModel::new(4, &RlConfig::default());
        let s = ErrorState::from_raw(55.0, 10);
        let a = policy.select_action(&s, ActionMode::Explore, &mut rng_for(9, "x"));
        let b = policy.select_action(&s, ActionMode::Explore, &mut rng_for(9, "x"));
        assert_eq!(a, b);
        assert!(a.1.noise.iter().any(|g| *g != 0.0));
    }

    #[test]
    fn critic_update_example() {
        let config = RlConfig {
            discount: 0.9,
            critic_lr: 0.1,
            ..RlConfig::default()
        };
        let mut policy = PolicyModel::new(2, &config);
        let noise = ActionNoise::none(2);
        policy.td_update(&Transition {
            state: 3,
            noise: &noise,
            reward: 20.0,
            next_state: 4,
            terminal: false,
        });
        assert_eq!(policy.critic_values[3], 2.0);
    }

    #[test]
    fn zero_td_error_is_a_fixed_point() {
        let config = RlConfig {
            discount: 1.0,
            ..RlConfig::default()
        };
        let mut policy = PolicyModel::new(2, &config);
        policy.critic_values[1] = 4.0;
        policy.critic_values[2] = 4.0;
        let before = policy.clone();
        let noise = ActionNoise {
            noise: vec![0.3, -0.2],
            std: 0.5,
        };
        let delta = policy.td_update(&Transition {
            state: 1,
            noise: &noise,
            reward: 0.0,
            next_state: 2,
            terminal: false,
        });
        assert_eq!(delta, 0.0);
        assert_eq!(policy, before);
    }

    #[test]
    fn critic_converges_geometrically() {
        // V_k = r (1 - (1 - α)^k) for a self-loop with γ = 0.
        let config = RlConfig {
            discount: 0.0,
            critic_lr: 0.1,
            ..RlConfig::default()
        };
        let mut policy = PolicyModel::new(2, &config);
        let noise = ActionNoise::none(2);
        let r = 7.5;
        for k in 1..=60 {
            policy.td_update(&Transition {
                state: 0,
                noise: &noise,
                reward: r,
                next_state: 0,
                terminal: false,
            });
            let expected = r * (1.0 - 0.9f64.powi(k));
            assert!((policy.critic_values[0] - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn actor_moves_along_rewarded_noise() {
        let mut policy = PolicyModel::new(2, &RlConfig::default());
        let noise = ActionNoise {
            noise: vec![0.5, -0.5],
            std: 0.5,
        };
        policy.td_update(&Transition {
            state: 0,
            noise: &noise,
            reward: 1.0,
            next_state: 0,
            terminal: true,
        });
        // θ += α_a δ g / σ² = 0.05 · 1 · (±0.5) / 0.25
        assert!((policy.actor_logits[0][0] - 0.1).abs() < 1e-15);
        assert!((policy.actor_logits[0][1] + 0.1).abs() < 1e-15);
    }

    #[test]
    fn exploration_schedule() {
        let mut policy = PolicyModel::new(2, &RlConfig::default());
        let mut last = policy.exploration_std;
        for e in 1..=10 {
            policy.finish_episode();
            assert!(policy.exploration_std < last);
            assert!((policy.exploration_std - 0.5 * 0.97f64.powi(e)).abs() < 1e-15);
            last = policy.exploration_std;
        }
    }

    #[test]
    fn policy_json_round_trip() {
        let mut policy = PolicyModel::new(3, &RlConfig::default());
        policy.actor_logits[4][1] = 0.125;
        policy.critic_values[7] = -3.0;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("policy.json");
        policy.save(&path).unwrap();
        assert_eq!(PolicyModel::load(&path).unwrap(), policy);
    }

    proptest! {
        #[test]
        fn bucket_matches_floor_formula(raw in 0.0f64..=100.0, n in 1usize..40) {
            let s = ErrorState::from_raw(raw, n);
            let width = 100.0 / n as f64;
            let expected = if raw == 100.0 { n - 1 } else { ((raw / width).floor() as usize).min(n - 1) };
            prop_assert_eq!(s.bucket, expected);
            prop_assert!(s.bucket < n);
            prop_assert_eq!(s.bucket_lb, s.bucket as f64 * width);
        }

        #[test]
        fn state_is_always_in_range(
            y in prop::sample::select(vec![-1e6, -3.0, -1e-3, 1e-3, 0.5, 2.0, 1e4]),
            p in prop::collection::vec(-1e6f64..1e6, 3),
        ) {
            let s = compute_state(y, &WeightVector::uniform(3), &p, 10).unwrap();
            prop_assert!((0.0..=100.0).contains(&s.raw));
        }
    }
}
