//! Base forecasters and the aligned prediction panel.
//!
//! Every forecaster maps the last `lag_order` values (oldest first) to a
//! one-step-ahead prediction. Training windows never cross a segment
//! boundary, so the five CATS training segments can be fitted jointly.

mod ar;
mod feedforward;
mod recurrent;
mod trees;

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use ar::ArModel;
pub use feedforward::{FeedforwardModel, FeedforwardParams};
pub use recurrent::{gru_param_count, GruModel, RecurrentParams};
pub use trees::{Forest, Node, TreeParams};

use crate::error::{Error, Result};
use crate::seed::rng_for;
use crate::series::TimeSeries;

pub const DEFAULT_LAG_ORDER: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ForecasterKind {
    ArLeastSquares,
    FeedforwardNet,
    RecurrentNet,
    BaggedTrees,
}

impl ForecasterKind {
    pub fn label(&self) -> &'static str {
        match self {
            ForecasterKind::ArLeastSquares => "ar-least-squares",
            ForecasterKind::FeedforwardNet => "feedforward-net",
            ForecasterKind::RecurrentNet => "recurrent-net",
            ForecasterKind::BaggedTrees => "bagged-trees",
        }
    }

    /// Hyperparameter keys accepted by this kind, with defaults.
    ///
    /// | kind | key | default | valid |
    /// |---|---|---|---|
    /// | ar-least-squares | intercept | 0 | 0 or 1 |
    /// | feedforward-net | hidden1, hidden2 | 8, 8 | 1..=64 |
    /// | feedforward-net | epochs | 150 | 1..=10000 |
    /// | feedforward-net | learning_rate | 0.01 | (0, 1] |
    /// | feedforward-net | batch_size | 32 | >= 1 |
    /// | recurrent-net | hidden | 6 | 1..=8 |
    /// | recurrent-net | epochs | 60 | 1..=10000 |
    /// | recurrent-net | learning_rate | 0.01 | (0, 1] |
    /// | recurrent-net | batch_size | 32 | >= 1 |
    /// | recurrent-net | bptt_window | lag_order | 1..=lag_order |
    /// | bagged-trees | trees | 20 | 1..=1000 |
    /// | bagged-trees | max_depth | 6 | 0..=32 |
    /// | bagged-trees | min_leaf | 5 | >= 1 |
    /// | bagged-trees | bootstrap | 1 | 0 or 1 |
    pub fn defaults(&self, lag_order: usize) -> BTreeMap<String, f64> {
        let pairs: &[(&str, f64)] = match self {
            ForecasterKind::ArLeastSquares => &[("intercept", 0.0)],
            ForecasterKind::FeedforwardNet => &[
                ("hidden1", 8.0),
                ("hidden2", 8.0),
                ("epochs", 150.0),
                ("learning_rate", 0.01),
                ("batch_size", 32.0),
            ],
            ForecasterKind::RecurrentNet => &[
                ("hidden", 6.0),
                ("epochs", 60.0),
                ("learning_rate", 0.01),
                ("batch_size", 32.0),
                ("bptt_window", lag_order as f64),
            ],
            ForecasterKind::BaggedTrees => &[
                ("trees", 20.0),
                ("max_depth", 6.0),
                ("min_leaf", 5.0),
                ("bootstrap", 1.0),
            ],
        };
        pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
    }
}

/// What to train: model kind, lag window, overrides and seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForecasterSpec {
    pub kind: ForecasterKind,
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default = "default_lag")]
    pub lag_order: usize,
    #[serde(default)]
    pub hyperparams: BTreeMap<String, f64>,
    #[serde(default)]
    pub seed: u64,
}

fn default_lag() -> usize {
    DEFAULT_LAG_ORDER
}

impl ForecasterSpec {
    pub fn new(kind: ForecasterKind) -> Self {
        Self {
            kind,
            name: None,
            lag_order: DEFAULT_LAG_ORDER,
            hyperparams: BTreeMap::new(),
            seed: 0,
        }
    }

    pub fn with_lag(mut self, lag_order: usize) -> Self {
        self.lag_order = lag_order;
        self
    }

    pub fn with(mut self, key: &str, value: f64) -> Self {
        self.hyperparams.insert(key.to_string(), value);
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn named(mut self, name: &str) -> Self {
        self.name = Some(name.to_string());
        self
    }

    pub fn display_name(&self) -> String {
        self.name.clone().unwrap_or_else(|| self.kind.label().to_string())
    }

    /// Defaults merged with overrides; unknown keys are rejected.
    pub fn resolved(&self) -> Result<BTreeMap<String, f64>> {
        let mut params = self.kind.defaults(self.lag_order);
        for (k, v) in &self.hyperparams {
            if !params.contains_key(k) {
                return Err(Error::Parameter(format!(
                    "{}: unknown hyperparameter {k:?}",
                    self.kind.label()
                )));
            }
            if !v.is_finite() {
                return Err(Error::Parameter(format!("{}: {k} is not finite", self.kind.label())));
            }
            params.insert(k.clone(), *v);
        }
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        if self.lag_order == 0 {
            return Err(Error::Parameter("lag_order must be at least 1".into()));
        }
        let p = self.resolved()?;
        let label = self.kind.label();
        let int_in = |key: &str, lo: f64, hi: f64| -> Result<usize> {
            let v = p[key];
            if v.fract() != 0.0 || v < lo || v > hi {
                return Err(Error::Parameter(format!(
                    "{label}: {key} = {v} must be an integer in [{lo}, {hi}]"
                )));
            }
            Ok(v as usize)
        };
        let rate = |key: &str| -> Result<()> {
            let v = p[key];
            if !(v > 0.0 && v <= 1.0) {
                return Err(Error::Parameter(format!("{label}: {key} = {v} must be in (0, 1]")));
            }
            Ok(())
        };
        match self.kind {
            ForecasterKind::ArLeastSquares => {
                int_in("intercept", 0.0, 1.0)?;
            }
            ForecasterKind::FeedforwardNet => {
                int_in("hidden1", 1.0, 64.0)?;
                int_in("hidden2", 1.0, 64.0)?;
                int_in("epochs", 1.0, 10_000.0)?;
                int_in("batch_size", 1.0, f64::MAX)?;
                rate("learning_rate")?;
            }
            ForecasterKind::RecurrentNet => {
                int_in("hidden", 1.0, 8.0)?;
                int_in("epochs", 1.0, 10_000.0)?;
                int_in("batch_size", 1.0, f64::MAX)?;
                int_in("bptt_window", 1.0, self.lag_order as f64)?;
                rate("learning_rate")?;
            }
            ForecasterKind::BaggedTrees => {
                int_in("trees", 1.0, 1000.0)?;
                int_in("max_depth", 0.0, 32.0)?;
                int_in("min_leaf", 1.0, f64::MAX)?;
                int_in("bootstrap", 0.0, 1.0)?;
            }
        }
        Ok(())
    }
}

/// Affine standardization fitted on the training values.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub mean: f64,
    pub std: f64,
}

impl Scaler {
    pub fn fit(values: impl IntoIterator<Item = f64>) -> Self {
        let values: Vec<f64> = values.into_iter().collect();
        let n = values.len().max(1) as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let std = var.sqrt();
        Self {
            mean,
            std: if std > 1e-12 { std } else { 1.0 },
        }
    }

    pub fn identity() -> Self {
        Self { mean: 0.0, std: 1.0 }
    }

    pub fn forward(&self, v: f64) -> f64 {
        (v - self.mean) / self.std
    }

    pub fn forward_all(&self, vs: &[f64]) -> Vec<f64> {
        vs.iter().map(|&v| self.forward(v)).collect()
    }

    pub fn inverse(&self, v: f64) -> f64 {
        v * self.std + self.mean
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum Model {
    Ar(ArModel),
    Feedforward(FeedforwardModel),
    Recurrent(GruModel),
    Trees(Forest),
}

/// A trained, immutable one-step-ahead forecaster.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Forecaster {
    pub name: String,
    pub spec: ForecasterSpec,
    pub model: Model,
}

/// All `lag`-long windows (oldest first) and their next values, per segment.
pub fn lag_windows(segments: &[&[f64]], lag: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
    let mut inputs = Vec::new();
    let mut targets = Vec::new();
    for seg in segments {
        for t in lag..seg.len() {
            inputs.push(seg[t - lag..t].to_vec());
            targets.push(seg[t]);
        }
    }
    (inputs, targets)
}

fn flag(p: &BTreeMap<String, f64>, key: &str) -> bool {
    p[key] != 0.0
}

fn count(p: &BTreeMap<String, f64>, key: &str) -> usize {
    p[key] as usize
}

/// Trains one forecaster on the given segments.
pub fn fit(spec: &ForecasterSpec, segments: &[&[f64]]) -> Result<Forecaster> {
    spec.validate()?;
    let name = spec.display_name();
    let lag = spec.lag_order;
    let total: usize = segments.iter().map(|s| s.len()).sum();
    if total <= lag + 1 {
        return Err(Error::Training {
            model: name,
            message: format!("{total} training samples for lag order {lag}"),
        });
    }
    let (inputs, targets) = lag_windows(segments, lag);
    if inputs.len() < 2 {
        return Err(Error::Training {
            model: name,
            message: "no segment is longer than the lag window".into(),
        });
    }
    if let Some(seg) = segments.iter().find(|s| s.iter().any(|v| !v.is_finite())) {
        return Err(Error::Training {
            model: name,
            message: format!("non-finite value in a segment of length {}", seg.len()),
        });
    }
    let p = spec.resolved()?;
    let mut rng = rng_for(spec.seed, spec.kind.label());
    let scaler = Scaler::fit(segments.iter().flat_map(|s| s.iter().copied()));
    let model = match spec.kind {
        ForecasterKind::ArLeastSquares => {
            Model::Ar(ArModel::fit(&inputs, &targets, flag(&p, "intercept"))?)
        }
        ForecasterKind::FeedforwardNet => {
            let params = FeedforwardParams {
                hidden: [count(&p, "hidden1"), count(&p, "hidden2")],
                epochs: count(&p, "epochs"),
                learning_rate: p["learning_rate"],
                batch_size: count(&p, "batch_size"),
            };
            Model::Feedforward(FeedforwardModel::fit(&inputs, &targets, scaler, &params, &mut rng)?)
        }
        ForecasterKind::RecurrentNet => {
            let params = RecurrentParams {
                hidden: count(&p, "hidden"),
                epochs: count(&p, "epochs"),
                learning_rate: p["learning_rate"],
                batch_size: count(&p, "batch_size"),
                bptt_window: count(&p, "bptt_window"),
            };
            if let Some(short) = segments.iter().find(|s| s.len() < params.bptt_window) {
                return Err(Error::Training {
                    model: name,
                    message: format!(
                        "bptt window {} exceeds segment length {}",
                        params.bptt_window,
                        short.len()
                    ),
                });
            }
            Model::Recurrent(GruModel::fit(&inputs, &targets, scaler, &params, &mut rng)?)
        }
        ForecasterKind::BaggedTrees => {
            let params = TreeParams {
                trees: count(&p, "trees"),
                max_depth: count(&p, "max_depth"),
                min_leaf: count(&p, "min_leaf"),
                bootstrap: flag(&p, "bootstrap"),
            };
            Model::Trees(Forest::fit(&inputs, &targets, &params, &mut rng))
        }
    };
    let forecaster = Forecaster {
        name,
        spec: spec.clone(),
        model,
    };
    // A diverged model shows up as non-finite in-sample output.
    if let Some(x) = inputs.iter().find(|x| !forecaster.raw_predict(x).is_finite()) {
        return Err(Error::Numeric {
            model: forecaster.name.clone(),
            message: format!("non-finite prediction for window {x:?}"),
        });
    }
    Ok(forecaster)
}

impl Forecaster {
    pub fn lag_order(&self) -> usize {
        self.spec.lag_order
    }

    pub fn kind(&self) -> ForecasterKind {
        self.spec.kind
    }

    fn raw_predict(&self, history: &[f64]) -> f64 {
        match &self.model {
            Model::Ar(m) => m.predict(history),
            Model::Feedforward(m) => m.predict(history),
            Model::Recurrent(m) => m.predict(history),
            Model::Trees(m) => m.predict(history),
        }
    }

    /// One-step-ahead prediction from exactly `lag_order` values, oldest first.
    pub fn predict_next(&self, history: &[f64]) -> Result<f64> {
        if history.len() != self.lag_order() {
            return Err(Error::Contract(format!(
                "{} expects {} lagged values, got {}",
                self.name,
                self.lag_order(),
                history.len()
            )));
        }
        if history.iter().any(|v| !v.is_finite()) {
            return Err(Error::Contract(format!("{}: non-finite history", self.name)));
        }
        let y = self.raw_predict(history);
        if !y.is_finite() {
            return Err(Error::Numeric {
                model: self.name.clone(),
                message: "non-finite prediction".into(),
            });
        }
        Ok(y)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| Error::json(format!("serializing {}", self.name), e))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), e))
    }
}

/// `M × T` one-step-ahead predictions aligned to time indices.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForecastPanel {
    /// `predictions[i][t]` is model `i` at `time_indices[t]`.
    pub predictions: Vec<Vec<f64>>,
    pub model_names: Vec<String>,
    pub time_indices: Vec<usize>,
}

impl ForecastPanel {
    pub fn models(&self) -> usize {
        self.model_names.len()
    }

    pub fn len(&self) -> usize {
        self.time_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.time_indices.is_empty()
    }

    pub fn column(&self, t: usize) -> Vec<f64> {
        self.predictions.iter().map(|row| row[t]).collect()
    }

    pub fn position(&self, index: usize) -> Option<usize> {
        self.time_indices.binary_search(&index).ok()
    }

    pub fn row(&self, model: usize) -> &[f64] {
        &self.predictions[model]
    }
}

/// Source of substitute values when a lag falls on a missing sample.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LagFill {
    /// Each model sees its own earlier predictions.
    #[default]
    OwnPrediction,
    /// Every model sees the ensemble's combined earlier prediction.
    Ensemble,
}

/// Walks forward through a series, producing prediction columns and
/// remembering substitutes for missing samples.
pub struct RollingPredictor<'a> {
    models: &'a [Forecaster],
    series: &'a TimeSeries,
    fills: Vec<HashMap<usize, f64>>,
}

impl<'a> RollingPredictor<'a> {
    pub fn new(models: &'a [Forecaster], series: &'a TimeSeries) -> Self {
        Self {
            models,
            series,
            fills: vec![HashMap::new(); models.len()],
        }
    }

    fn history(&self, model: usize, index: usize) -> Result<Vec<f64>> {
        let lag = self.models[model].lag_order();
        if index < self.series.start_index() + lag {
            return Err(Error::Contract(format!(
                "index {index} has fewer than {lag} preceding samples"
            )));
        }
        (index - lag..index)
            .map(|j| {
                self.series
                    .get(j)
                    .or_else(|| self.fills[model].get(&j).copied())
                    .ok_or_else(|| {
                        Error::Contract(format!(
                            "{}: lag {j} of index {index} is missing and was not predicted",
                            self.models[model].name
                        ))
                    })
            })
            .collect()
    }

    /// Predictions of every model for `index`.
    pub fn column(&self, index: usize) -> Result<Vec<f64>> {
        (0..self.models.len())
            .map(|m| self.models[m].predict_next(&self.history(m, index)?))
            .collect()
    }

    /// Stores per-model substitutes for `index`; observed samples are ignored.
    pub fn record(&mut self, index: usize, values: &[f64]) {
        if self.series.get(index).is_none() {
            for (fill, &v) in self.fills.iter_mut().zip(values) {
                fill.insert(index, v);
            }
        }
    }

    /// Convenience for [`LagFill`]: records either the column or the combined value.
    pub fn advance(&mut self, index: usize, column: &[f64], combined: f64, mode: LagFill) {
        match mode {
            LagFill::OwnPrediction => self.record(index, column),
            LagFill::Ensemble => self.record(index, &vec![combined; column.len()]),
        }
    }
}

/// Predictions of every model at `indices` (strictly increasing). Missing
/// lags are filled with each model's own earlier predictions from this call.
pub fn build_panel(
    models: &[Forecaster],
    series: &TimeSeries,
    indices: &[usize],
) -> Result<ForecastPanel> {
    if models.len() < 2 {
        return Err(Error::Contract(format!(
            "a panel needs at least 2 models, got {}",
            models.len()
        )));
    }
    if indices.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Contract("panel indices must be strictly increasing".into()));
    }
    let mut rolling = RollingPredictor::new(models, series);
    let mut predictions = vec![Vec::with_capacity(indices.len()); models.len()];
    for &index in indices {
        let column = rolling.column(index)?;
        rolling.record(index, &column);
        for (row, v) in predictions.iter_mut().zip(&column) {
            row.push(*v);
        }
    }
    Ok(ForecastPanel {
        predictions,
        model_names: models.iter().map(|m| m.name.clone()).collect(),
        time_indices: indices.to_vec(),
    })
}

/// Panel indices inside each segment that have a full lag window within
/// the same segment.
pub fn segment_indices(segments: &[crate::series::IndexRange], max_lag: usize) -> Vec<Vec<usize>> {
    segments
        .iter()
        .map(|s| (s.start + max_lag..=s.end).collect())
        .collect()
}

pub fn max_lag(models: &[Forecaster]) -> usize {
    models.iter().map(Forecaster::lag_order).max().unwrap_or(0)
}
