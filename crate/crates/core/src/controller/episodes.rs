use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    compute_state_eps, fallback_state, reward_with, ActionMode, ActionNoise, ErrorState,
    PolicyModel, RewardForm, Transition, DEFAULT_EPSILON_Y,
};
use crate::combiner::{combine, WeightVector};
use crate::error::{Error, Result};
use crate::forecast::{ForecastPanel, Forecaster, LagFill, RollingPredictor};
use crate::seed::Rng;
use crate::series::{IndexRange, SplitPlan, TimeSeries};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub time_index: usize,
    pub state: ErrorState,
    pub weights: WeightVector,
    pub reward: f64,
    /// The state came from the variance-scaled fallback because `|y|` was degenerate.
    pub fallback: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub episode_index: usize,
    pub segment: usize,
    /// State the first reward is measured against.
    pub initial_state: ErrorState,
    pub steps: Vec<StepRecord>,
    pub total_reward: f64,
}

impl EpisodeLog {
    pub fn final_state(&self) -> Option<&ErrorState> {
        self.steps.last().map(|s| &s.state)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainingOptions {
    pub total_episodes: usize,
    pub epsilon_y: f64,
    /// Denominator of the fallback state; usually the training-series variance.
    pub fallback_variance: f64,
    pub reward: RewardForm,
}

impl TrainingOptions {
    pub fn new(total_episodes: usize, fallback_variance: f64) -> Self {
        Self {
            total_episodes,
            epsilon_y: DEFAULT_EPSILON_Y,
            fallback_variance,
            reward: RewardForm::Decrease,
        }
    }
}

struct StateRule {
    buckets: usize,
    epsilon_y: f64,
    variance: f64,
}

impl StateRule {
    fn evaluate(&self, y: f64, w: &WeightVector, column: &[f64]) -> Result<(ErrorState, bool)> {
        match compute_state_eps(y, w, column, self.buckets, self.epsilon_y) {
            Ok(s) => Ok((s, false)),
            Err(Error::DegenerateDenominator { .. }) => {
                Ok((fallback_state(y, w, column, self.buckets, self.variance)?, true))
            }
            Err(e) => Err(e),
        }
    }

    /// State of the exploit action taken from the lowest-error bucket.
    fn initial(&self, policy: &PolicyModel, y: f64, column: &[f64]) -> Result<ErrorState> {
        Ok(self.evaluate(y, &policy.exploit(0), column)?.0)
    }
}

fn check_policy(policy: &PolicyModel, models: usize) -> Result<()> {
    if policy.models != models {
        return Err(Error::Contract(format!(
            "policy is for {} models, panel has {models}",
            policy.models
        )));
    }
    Ok(())
}

/// Episodic training over the training segments, round-robin. Each episode
/// starts from a fresh initial state; exploration decays after every episode.
pub fn train_episodic(
    policy: &mut PolicyModel,
    panel: &ForecastPanel,
    truth: &TimeSeries,
    plan: &SplitPlan,
    options: &TrainingOptions,
    rng: &mut Rng,
) -> Result<Vec<EpisodeLog>> {
    check_policy(policy, panel.models())?;
    let rule = StateRule {
        buckets: policy.buckets,
        epsilon_y: options.epsilon_y,
        variance: options.fallback_variance,
    };
    let segments: Vec<Vec<usize>> = plan
        .train_segments
        .iter()
        .map(|seg| {
            panel
                .time_indices
                .iter()
                .enumerate()
                .filter(|(_, t)| seg.contains(**t))
                .map(|(pos, _)| pos)
                .collect()
        })
        .collect();
    if let Some(k) = segments.iter().position(Vec::is_empty) {
        return Err(Error::Contract(format!(
            "panel has no columns in training segment {k}"
        )));
    }
    let truth_at = |pos: usize| -> Result<f64> {
        let t = panel.time_indices[pos];
        truth
            .get(t)
            .ok_or_else(|| Error::Contract(format!("no true value at training index {t}")))
    };

    let mut logs = Vec::with_capacity(options.total_episodes);
    for episode in 0..options.total_episodes {
        let segment = episode % segments.len();
        let positions = &segments[segment];
        let first = positions[0];
        let initial_state = rule.initial(policy, truth_at(first)?, &panel.column(first))?;
        let mut prev = initial_state;
        let mut steps = Vec::with_capacity(positions.len());
        for (k, &pos) in positions.iter().enumerate() {
            let column = panel.column(pos);
            let (weights, noise) = policy.select_action(&prev, ActionMode::Explore, rng);
            let (curr, fallback) = rule.evaluate(truth_at(pos)?, &weights, &column)?;
            let reward = reward_with(options.reward, &prev, &curr);
            policy.td_update(&Transition {
                state: prev.bucket,
                noise: &noise,
                reward,
                next_state: curr.bucket,
                terminal: k + 1 == positions.len(),
            });
            steps.push(StepRecord {
                time_index: panel.time_indices[pos],
                state: curr,
                weights,
                reward,
                fallback,
            });
            prev = curr;
        }
        if !policy.is_finite() {
            return Err(Error::Numeric {
                model: "rl-controller".into(),
                message: format!("policy diverged in episode {episode}"),
            });
        }
        policy.finish_episode();
        let total_reward = steps.iter().map(|s| s.reward).sum();
        logs.push(EpisodeLog {
            episode_index: episode,
            segment,
            initial_state,
            steps,
            total_reward,
        });
    }
    Ok(logs)
}

/// Where the error signal comes from during online inference.
#[derive(Clone, Copy, Debug)]
pub enum Feedback<'a> {
    /// The realized value, taken from a complete copy of the series.
    TrueValue(&'a TimeSeries),
    /// The mean of the base-model predictions stands in for the unknown value.
    Proxy,
}

impl Feedback<'_> {
    pub fn label(&self) -> &'static str {
        match self {
            Feedback::TrueValue(_) => "true-value",
            Feedback::Proxy => "proxy-feedback",
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct InferenceOptions<'a> {
    pub feedback: Feedback<'a>,
    pub lag_fill: LagFill,
    pub epsilon_y: f64,
    pub fallback_variance: f64,
    pub reward: RewardForm,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InferenceOutcome {
    /// `(time index, combined prediction)` in test order.
    pub predictions: Vec<(usize, f64)>,
    pub steps: Vec<StepRecord>,
    pub updates: usize,
    pub feedback: String,
}

/// Predicts every test index in order, adapting the policy after each step
/// once that step's error signal is known.
pub fn infer_online(
    policy: &mut PolicyModel,
    models: &[Forecaster],
    series: &TimeSeries,
    test_segments: &[IndexRange],
    options: &InferenceOptions<'_>,
) -> Result<InferenceOutcome> {
    check_policy(policy, models.len())?;
    let rule = StateRule {
        buckets: policy.buckets,
        epsilon_y: options.epsilon_y,
        variance: options.fallback_variance,
    };
    let mut rolling = RollingPredictor::new(models, series);
    let no_noise = ActionNoise::none(models.len());
    let mut predictions = Vec::new();
    let mut steps = Vec::new();
    let mut updates = 0;

    for block in test_segments {
        // Seed the state from the last observed sample before the block.
        let before = block.start.checked_sub(1);
        let mut prev = match before.and_then(|b| series.get(b).map(|y| (b, y))) {
            Some((b, y)) => match rolling.column(b) {
                Ok(column) => rule.initial(policy, y, &column)?,
                Err(Error::Contract(_)) => ErrorState::from_raw(0.0, policy.buckets),
                Err(e) => return Err(e),
            },
            None => ErrorState::from_raw(0.0, policy.buckets),
        };
        for t in block.iter() {
            let column = rolling.column(t)?;
            let weights = policy.exploit(prev.bucket);
            let combined = combine(&weights, &column)?;
            rolling.advance(t, &column, combined, options.lag_fill);
            predictions.push((t, combined));

            let signal = match options.feedback {
                Feedback::TrueValue(truth) => truth.get(t).ok_or_else(|| {
                    Error::Contract(format!("true-value feedback has no value at index {t}"))
                })?,
                Feedback::Proxy => column.iter().sum::<f64>() / column.len() as f64,
            };
            let (curr, fallback) = rule.evaluate(signal, &weights, &column)?;
            let reward = reward_with(options.reward, &prev, &curr);
            policy.td_update(&Transition {
                state: prev.bucket,
                noise: &no_noise,
                reward,
                next_state: curr.bucket,
                terminal: t == block.end,
            });
            updates += 1;
            steps.push(StepRecord {
                time_index: t,
                state: curr,
                weights,
                reward,
                fallback,
            });
            prev = curr;
        }
    }
    Ok(InferenceOutcome {
        predictions,
        steps,
        updates,
        feedback: options.feedback.label().to_string(),
    })
}

/// `episode,step,time_index,raw_state,bucket,reward,w_1..w_M`
pub fn export_episode_csv(logs: &[EpisodeLog], path: &Path) -> Result<()> {
    std::fs::write(path, episode_csv(logs)).map_err(|e| Error::io(path, e))
}

pub fn episode_csv(logs: &[EpisodeLog]) -> String {
    let m = logs
        .iter()
        .find_map(|l| l.steps.first())
        .map_or(0, |s| s.weights.len());
    let mut out = String::from("episode,step,time_index,raw_state,bucket,reward");
    for i in 1..=m {
        write!(out, ",w_{i}").unwrap();
    }
    out.push('\n');
    for log in logs {
        for (k, s) in log.steps.iter().enumerate() {
            write!(
                out,
                "{},{},{},{},{},{}",
                log.episode_index, k, s.time_index, s.state.raw, s.state.bucket, s.reward
            )
            .unwrap();
            for w in s.weights.as_slice() {
                write!(out, ",{w}").unwrap();
            }
            out.push('\n');
        }
    }
    out
}
