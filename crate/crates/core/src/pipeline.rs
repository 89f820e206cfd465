//! End-to-end runs: fit the base models, build panels, run each weighting
//! strategy and score it on the held-out blocks.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{fit_static_weights, OnlineNNTestMode, OnlineNNWeighter, DEFAULT_NN_LEARNING_RATE};
use crate::combiner::{combine, WeightVector};
use crate::controller::{
    infer_online, train_episodic, EpisodeLog, Feedback, InferenceOptions, InferenceOutcome,
    PolicyModel, RlConfig, StepRecord, TrainingOptions,
};
use crate::error::{Error, Result};
use crate::eval::{band_dominance, nmse, EvalReport, StrategyScore, Timings};
use crate::forecast::{
    build_panel, fit, max_lag, segment_indices, ForecastPanel, Forecaster, ForecasterSpec, LagFill,
};
use crate::seed::{derive_seed, rng_for};
use crate::series::{SplitPlan, TimeSeries};

/// A series split into training and test blocks. `observed` has the test
/// blocks marked missing; `truth`, when known, is the complete series.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub observed: TimeSeries,
    pub truth: Option<TimeSeries>,
    pub plan: SplitPlan,
}

impl Dataset {
    /// Hides the test blocks of a fully observed series.
    pub fn from_complete(series: TimeSeries, plan: SplitPlan) -> Result<Self> {
        let observed = series.masked(&plan.test_segments)?;
        plan.validate(&observed)?;
        Ok(Self {
            observed,
            truth: Some(series),
            plan,
        })
    }

    pub fn new(observed: TimeSeries, truth: Option<TimeSeries>, plan: SplitPlan) -> Result<Self> {
        plan.validate(&observed)?;
        for block in &plan.test_segments {
            if block.iter().any(|i| observed.get(i).is_some()) {
                return Err(Error::Structure(format!(
                    "test block [{}, {}] is not marked missing in the observed series",
                    block.start, block.end
                )));
            }
        }
        if let Some(truth) = &truth {
            if truth.range() != observed.range() {
                return Err(Error::Structure("truth and observed series cover different indices".into()));
            }
        }
        Ok(Self {
            observed,
            truth,
            plan,
        })
    }

    pub fn train_slices(&self) -> Result<Vec<Vec<f64>>> {
        self.plan
            .train_segments
            .iter()
            .map(|r| self.observed.slice(*r))
            .collect()
    }

    pub fn test_truth(&self) -> Result<Vec<f64>> {
        let truth = self
            .truth
            .as_ref()
            .ok_or_else(|| Error::UndefinedMetric("no true values for the test blocks".into()))?;
        self.plan
            .test_indices()
            .into_iter()
            .map(|i| {
                truth
                    .get(i)
                    .ok_or_else(|| Error::UndefinedMetric(format!("no true value at test index {i}")))
            })
            .collect()
    }

    pub fn training_variance(&self) -> f64 {
        let values: Vec<f64> = self.train_slices().unwrap_or_default().concat();
        let n = values.len().max(1) as f64;
        let mean = values.iter().sum::<f64>() / n;
        values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeedbackMode {
    #[default]
    TrueValue,
    Proxy,
}

impl FromStr for FeedbackMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "true-value" => Ok(Self::TrueValue),
            "proxy" => Ok(Self::Proxy),
            other => Err(Error::Parameter(format!(
                "unknown feedback mode {other:?} (expected true-value or proxy)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OnlineNNConfig {
    pub learning_rate: f64,
    pub test_mode: OnlineNNTestMode,
}

impl Default for OnlineNNConfig {
    fn default() -> Self {
        Self {
            learning_rate: DEFAULT_NN_LEARNING_RATE,
            test_mode: OnlineNNTestMode::FrozenNetwork,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSettings {
    pub rl: RlConfig,
    pub online_nn: OnlineNNConfig,
    pub feedback: FeedbackMode,
    pub lag_fill: LagFill,
    pub band_size: usize,
    pub smoothing_window: usize,
}

impl Default for RunSettings {
    fn default() -> Self {
        Self {
            rl: RlConfig::default(),
            online_nn: OnlineNNConfig::default(),
            feedback: FeedbackMode::TrueValue,
            lag_fill: LagFill::OwnPrediction,
            band_size: 1000,
            smoothing_window: 5,
        }
    }
}

impl RunSettings {
    pub fn validate(&self) -> Result<()> {
        self.rl.validate()?;
        let lr = self.online_nn.learning_rate;
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::Parameter(format!("online_nn.learning_rate {lr} must be positive")));
        }
        if self.band_size == 0 || self.smoothing_window == 0 {
            return Err(Error::Parameter("band_size and smoothing_window must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum Strategy {
    Rl,
    OnlineNn,
    Static,
    Uniform,
    /// A base model used on its own, by name.
    Single(String),
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Strategy::Rl => f.write_str("rl"),
            Strategy::OnlineNn => f.write_str("online-nn"),
            Strategy::Static => f.write_str("static"),
            Strategy::Uniform => f.write_str("uniform"),
            Strategy::Single(name) => write!(f, "single:{name}"),
        }
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rl" => Ok(Strategy::Rl),
            "online-nn" => Ok(Strategy::OnlineNn),
            "static" => Ok(Strategy::Static),
            "uniform" => Ok(Strategy::Uniform),
            _ => match s.strip_prefix("single:") {
                Some(name) if !name.is_empty() => Ok(Strategy::Single(name.to_string())),
                _ => Err(Error::Parameter(format!(
                    "unknown strategy {s:?} (expected rl, online-nn, static, uniform, single:<model> or each-single-model)"
                ))),
            },
        }
    }
}

impl From<Strategy> for String {
    fn from(s: Strategy) -> Self {
        s.to_string()
    }
}

impl TryFrom<String> for Strategy {
    type Error = Error;

    fn try_from(value: String) -> Result<Self> {
        value.parse()
    }
}

/// Parses strategy names, expanding `each-single-model` to one entry per model.
pub fn parse_strategies(names: &[String], model_names: &[String]) -> Result<Vec<Strategy>> {
    let mut out = Vec::new();
    for name in names {
        if name == "each-single-model" {
            out.extend(model_names.iter().cloned().map(Strategy::Single));
        } else {
            let s: Strategy = name.parse()?;
            if let Strategy::Single(m) = &s {
                if !model_names.contains(m) {
                    return Err(Error::Parameter(format!("no forecaster named {m:?}")));
                }
            }
            out.push(s);
        }
    }
    Ok(out)
}

/// Gives each spec a seed derived from the run seed and its name, so runs
/// are reproducible and models do not share random streams.
pub fn seeded_specs(specs: &[ForecasterSpec], seed: u64) -> Vec<ForecasterSpec> {
    specs
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let label = format!("forecaster-{i}-{}", s.display_name());
            s.clone().with_seed(derive_seed(seed.wrapping_add(s.seed), &label))
        })
        .collect()
}

pub fn check_specs(specs: &[ForecasterSpec]) -> Result<()> {
    if specs.len() < 2 {
        return Err(Error::Parameter("at least two forecasters are required".into()));
    }
    let mut names: Vec<String> = specs.iter().map(ForecasterSpec::display_name).collect();
    // Names become file names of saved models.
    if let Some(bad) = names.iter().find(|n| {
        n.is_empty() || !n.chars().all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c)) || n.starts_with('.')
    }) {
        return Err(Error::Parameter(format!(
            "forecaster name {bad:?} may only use letters, digits, '-', '_' and '.'"
        )));
    }
    names.sort();
    if let Some(w) = names.windows(2).find(|w| w[0] == w[1]) {
        return Err(Error::Parameter(format!("duplicate forecaster name {:?}", w[0])));
    }
    specs.iter().try_for_each(ForecasterSpec::validate)
}

/// Trains every forecaster on the training segments (in parallel).
pub fn fit_forecasters(specs: &[ForecasterSpec], dataset: &Dataset, seed: u64) -> Result<Vec<Forecaster>> {
    check_specs(specs)?;
    let slices = dataset.train_slices()?;
    let refs: Vec<&[f64]> = slices.iter().map(Vec::as_slice).collect();
    seeded_specs(specs, seed)
        .par_iter()
        .map(|spec| fit(spec, &refs))
        .collect()
}

/// Panels shared by every strategy of one seed.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub models: Vec<Forecaster>,
    pub train_panel: ForecastPanel,
    pub train_truth: Vec<f64>,
    /// Test columns with each model rolling on its own predictions.
    pub test_panel: ForecastPanel,
    pub fallback_variance: f64,
}

impl Prepared {
    pub fn new(dataset: &Dataset, models: Vec<Forecaster>) -> Result<Self> {
        let lag = max_lag(&models);
        let train_indices: Vec<usize> = segment_indices(&dataset.plan.train_segments, lag)
            .into_iter()
            .flatten()
            .collect();
        if train_indices.is_empty() {
            return Err(Error::Structure(format!(
                "training segments are not longer than the largest lag order {lag}"
            )));
        }
        let train_panel = build_panel(&models, &dataset.observed, &train_indices)?;
        let train_truth = train_indices
            .iter()
            .map(|&i| {
                dataset
                    .observed
                    .get(i)
                    .ok_or_else(|| Error::Structure(format!("training index {i} is missing")))
            })
            .collect::<Result<Vec<f64>>>()?;
        let test_panel = build_panel(&models, &dataset.observed, &dataset.plan.test_indices())?;
        Ok(Self {
            models,
            train_panel,
            train_truth,
            test_panel,
            fallback_variance: dataset.training_variance(),
        })
    }

    pub fn model_names(&self) -> Vec<String> {
        self.models.iter().map(|m| m.name.clone()).collect()
    }
}

/// Outcome of training and running the controller.
#[derive(Clone, Debug)]
pub struct RlRun {
    pub trained: PolicyModel,
    pub adapted: PolicyModel,
    pub logs: Vec<EpisodeLog>,
    pub inference: InferenceOutcome,
    pub train_seconds_per_step: f64,
    pub infer_seconds_per_step: f64,
}

impl RlRun {
    /// Weights over time: the last pass over every training segment plus the test steps.
    pub fn weight_trace(&self, segments: usize) -> Vec<StepRecord> {
        let start = self.logs.len().saturating_sub(segments);
        let mut trace: Vec<StepRecord> = self.logs[start..]
            .iter()
            .flat_map(|l| l.steps.iter().cloned())
            .chain(self.inference.steps.iter().cloned())
            .collect();
        trace.sort_by_key(|s| s.time_index);
        trace
    }
}

pub fn train_rl(
    prepared: &Prepared,
    dataset: &Dataset,
    settings: &RunSettings,
    seed: u64,
) -> Result<(PolicyModel, Vec<EpisodeLog>, f64)> {
    let mut policy = PolicyModel::new(prepared.models.len(), &settings.rl);
    let mut rng = rng_for(seed, "rl-exploration");
    let options = TrainingOptions {
        total_episodes: settings.rl.episodes,
        epsilon_y: settings.rl.epsilon_y,
        fallback_variance: prepared.fallback_variance,
        reward: settings.rl.reward,
    };
    let started = Instant::now();
    let logs = train_episodic(
        &mut policy,
        &prepared.train_panel,
        &dataset.observed,
        &dataset.plan,
        &options,
        &mut rng,
    )?;
    let steps: usize = logs.iter().map(|l| l.steps.len()).sum();
    let per_step = started.elapsed().as_secs_f64() / steps.max(1) as f64;
    Ok((policy, logs, per_step))
}

pub fn infer_rl(
    policy: &mut PolicyModel,
    models: &[Forecaster],
    dataset: &Dataset,
    settings: &RunSettings,
    fallback_variance: f64,
) -> Result<(InferenceOutcome, f64)> {
    let feedback = match settings.feedback {
        FeedbackMode::TrueValue => Feedback::TrueValue(dataset.truth.as_ref().ok_or_else(|| {
            Error::Parameter("true-value feedback needs the true test values".into())
        })?),
        FeedbackMode::Proxy => Feedback::Proxy,
    };
    let options = InferenceOptions {
        feedback,
        lag_fill: settings.lag_fill,
        epsilon_y: settings.rl.epsilon_y,
        fallback_variance,
        reward: settings.rl.reward,
    };
    let started = Instant::now();
    let outcome = infer_online(policy, models, &dataset.observed, &dataset.plan.test_segments, &options)?;
    let per_step = started.elapsed().as_secs_f64() / outcome.steps.len().max(1) as f64;
    Ok((outcome, per_step))
}

#[derive(Clone, Debug)]
pub struct StrategyRun {
    pub strategy: Strategy,
    /// `(time index, prediction)` over the test blocks.
    pub predictions: Vec<(usize, f64)>,
    pub weights: Vec<WeightVector>,
    pub seconds_per_step: Option<f64>,
    pub rl: Option<RlRun>,
}

impl StrategyRun {
    pub fn values(&self) -> Vec<f64> {
        self.predictions.iter().map(|p| p.1).collect()
    }
}

pub fn fixed_weights(strategy: Strategy, prepared: &Prepared, w: &WeightVector) -> Result<StrategyRun> {
    let panel = &prepared.test_panel;
    let predictions = (0..panel.len())
        .map(|t| Ok((panel.time_indices[t], combine(w, &panel.column(t))?)))
        .collect::<Result<_>>()?;
    Ok(StrategyRun {
        strategy,
        predictions,
        weights: vec![w.clone(); panel.len()],
        seconds_per_step: None,
        rl: None,
    })
}

/// Single SGD pass of the online NN over the training panel. Returns the
/// network, the weights it emitted and the seconds per step.
pub fn train_online_nn(
    prepared: &Prepared,
    settings: &RunSettings,
    seed: u64,
) -> Result<(OnlineNNWeighter, Vec<WeightVector>, f64)> {
    let truth = &prepared.train_truth;
    let n = truth.len() as f64;
    let mean = truth.iter().sum::<f64>() / n;
    let std = (truth.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / n).sqrt();
    let mut nn = OnlineNNWeighter::new(
        prepared.models.len(),
        settings.online_nn.learning_rate,
        derive_seed(seed, "online-nn"),
    )
    .with_scaling(mean, std);
    let started = Instant::now();
    let history = nn.train(&prepared.train_panel, truth)?;
    let per_step = started.elapsed().as_secs_f64() / history.len().max(1) as f64;
    Ok((nn, history, per_step))
}

/// Test predictions of a trained online NN under the chosen test mode.
pub fn online_nn_run(
    nn: &OnlineNNWeighter,
    final_weights: &WeightVector,
    mode: OnlineNNTestMode,
    prepared: &Prepared,
) -> Result<StrategyRun> {
    match mode {
        OnlineNNTestMode::FinalWeights => fixed_weights(Strategy::OnlineNn, prepared, final_weights),
        OnlineNNTestMode::FrozenNetwork => {
            let panel = &prepared.test_panel;
            let mut predictions = Vec::with_capacity(panel.len());
            let mut weights = Vec::with_capacity(panel.len());
            for t in 0..panel.len() {
                let column = panel.column(t);
                let w = nn.infer(&column)?;
                predictions.push((panel.time_indices[t], combine(&w, &column)?));
                weights.push(w);
            }
            Ok(StrategyRun {
                strategy: Strategy::OnlineNn,
                predictions,
                weights,
                seconds_per_step: None,
                rl: None,
            })
        }
    }
}

pub fn run_strategy(
    strategy: &Strategy,
    prepared: &Prepared,
    dataset: &Dataset,
    settings: &RunSettings,
    seed: u64,
) -> Result<StrategyRun> {
    let m = prepared.models.len();
    match strategy {
        Strategy::Uniform => fixed_weights(strategy.clone(), prepared, &WeightVector::uniform(m)),
        Strategy::Single(name) => {
            let i = prepared
                .models
                .iter()
                .position(|f| &f.name == name)
                .ok_or_else(|| Error::Parameter(format!("no forecaster named {name:?}")))?;
            fixed_weights(strategy.clone(), prepared, &WeightVector::one_hot(m, i))
        }
        Strategy::Static => {
            let w = fit_static_weights(&prepared.train_panel, &prepared.train_truth)?;
            fixed_weights(strategy.clone(), prepared, &w)
        }
        Strategy::OnlineNn => {
            let (nn, history, per_step) = train_online_nn(prepared, settings, seed)?;
            let last = history.last().cloned().unwrap_or_else(|| WeightVector::uniform(m));
            let mut run = online_nn_run(&nn, &last, settings.online_nn.test_mode, prepared)?;
            run.seconds_per_step = Some(per_step);
            Ok(run)
        }
        Strategy::Rl => {
            let (trained, logs, train_per_step) = train_rl(prepared, dataset, settings, seed)?;
            let mut adapted = trained.clone();
            let (inference, infer_per_step) =
                infer_rl(&mut adapted, &prepared.models, dataset, settings, prepared.fallback_variance)?;
            Ok(StrategyRun {
                strategy: strategy.clone(),
                predictions: inference.predictions.clone(),
                weights: inference.steps.iter().map(|s| s.weights.clone()).collect(),
                seconds_per_step: Some(infer_per_step),
                rl: Some(RlRun {
                    trained,
                    adapted,
                    logs,
                    inference,
                    train_seconds_per_step: train_per_step,
                    infer_seconds_per_step: infer_per_step,
                }),
            })
        }
    }
}

/// Everything one seed produced.
#[derive(Debug)]
pub struct SeedRun {
    pub seed: u64,
    pub models: Vec<String>,
    pub runs: Vec<(Strategy, std::result::Result<StrategyRun, String>)>,
}

impl SeedRun {
    pub fn run(&self, strategy: &Strategy) -> Option<&StrategyRun> {
        self.runs
            .iter()
            .find(|(s, _)| s == strategy)
            .and_then(|(_, r)| r.as_ref().ok())
    }
}

pub struct Comparison {
    pub report: EvalReport,
    pub runs: Vec<SeedRun>,
}

fn run_seed(
    dataset: &Dataset,
    specs: &[ForecasterSpec],
    strategies: &[Strategy],
    settings: &RunSettings,
    seed: u64,
) -> SeedRun {
    let prepared = fit_forecasters(specs, dataset, seed).and_then(|m| Prepared::new(dataset, m));
    match prepared {
        Ok(prepared) => SeedRun {
            seed,
            models: prepared.model_names(),
            runs: strategies
                .iter()
                .map(|s| {
                    let r = run_strategy(s, &prepared, dataset, settings, seed).map_err(|e| e.to_string());
                    (s.clone(), r)
                })
                .collect(),
        },
        Err(e) => SeedRun {
            seed,
            models: specs.iter().map(ForecasterSpec::display_name).collect(),
            runs: strategies
                .iter()
                .map(|s| (s.clone(), Err(format!("forecasters: {e}"))))
                .collect(),
        },
    }
}

/// Runs every strategy for every seed on identical panels and scores the
/// test blocks. Failed strategies become failed cells instead of aborting.
pub fn compare_strategies(
    dataset: &Dataset,
    specs: &[ForecasterSpec],
    strategies: &[Strategy],
    seeds: &[u64],
    settings: &RunSettings,
) -> Result<Comparison> {
    if seeds.is_empty() {
        return Err(Error::Parameter("at least one seed is required".into()));
    }
    if strategies.is_empty() {
        return Err(Error::Parameter("at least one strategy is required".into()));
    }
    settings.validate()?;
    check_specs(specs)?;
    let truth = dataset.test_truth()?;

    let runs: Vec<SeedRun> = seeds
        .par_iter()
        .map(|&seed| run_seed(dataset, specs, strategies, settings, seed))
        .collect();

    let strategies_scored = strategies
        .iter()
        .map(|s| {
            let results = runs
                .iter()
                .map(|run| {
                    let (_, r) = run.runs.iter().find(|(k, _)| k == s).expect("strategy ran");
                    match r {
                        Ok(run) => nmse(&run.values(), &truth).map_err(|e| e.to_string()),
                        Err(e) => Err(e.clone()),
                    }
                })
                .collect();
            StrategyScore::from_results(&s.to_string(), results)
        })
        .collect();

    let episode_rewards = runs
        .iter()
        .map(|r| {
            r.run(&Strategy::Rl)
                .and_then(|s| s.rl.as_ref())
                .map(|rl| rl.logs.iter().map(|l| l.total_reward).collect())
                .unwrap_or_default()
        })
        .collect();

    let band = runs
        .first()
        .and_then(|r| r.run(&Strategy::Rl).and_then(|s| s.rl.as_ref()).map(|rl| (r, rl)))
        .map(|(r, rl)| {
            band_dominance(
                &rl.weight_trace(dataset.plan.episodes_per_pass),
                settings.band_size,
                &r.models,
            )
        })
        .unwrap_or_default();

    let mut timings = Timings::default();
    for s in strategies {
        let secs: Vec<f64> = runs
            .iter()
            .filter_map(|r| r.run(s).and_then(|x| x.seconds_per_step))
            .collect();
        if !secs.is_empty() {
            timings
                .seconds_per_step
                .insert(s.to_string(), secs.iter().sum::<f64>() / secs.len() as f64);
        }
    }

    let feedback = match settings.feedback {
        FeedbackMode::TrueValue => "true-value",
        FeedbackMode::Proxy => "proxy-feedback",
    };
    Ok(Comparison {
        report: EvalReport {
            seeds: seeds.to_vec(),
            feedback: feedback.to_string(),
            strategies: strategies_scored,
            episode_rewards,
            smoothing_window: settings.smoothing_window,
            band_size: settings.band_size,
            band_dominance: band,
            runtime_per_step: timings,
        },
        runs,
    })
}
