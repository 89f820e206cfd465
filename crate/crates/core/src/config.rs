//! Run configuration: one JSON file describing data, split, models and
//! hyperparameters. Unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::controller::RlConfig;
use crate::error::{Error, Result};
use crate::forecast::{ForecasterSpec, LagFill};
use crate::pipeline::{check_specs, parse_strategies, Dataset, FeedbackMode, OnlineNNConfig, RunSettings, Strategy};
use crate::series::{
    cats_missing_blocks, cats_split, load_csv, ratio_split, synth_regimes, MissingPolicy, SegmentSpec,
    SplitPlan, TimeSeries,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DataConfig {
    /// `index,value` file. A fully observed file has its test blocks hidden
    /// by the split; a file with gaps needs `truth_path` for scoring.
    Csv {
        path: PathBuf,
        /// Value that marks a missing sample, in addition to empty cells.
        #[serde(default)]
        sentinel: Option<f64>,
        #[serde(default)]
        truth_path: Option<PathBuf>,
    },
    Synthetic {
        segments: Vec<SegmentSpec>,
        #[serde(default)]
        seed: u64,
    },
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SplitConfig {
    /// Five 980-sample training segments, each followed by a 20-sample test block.
    #[default]
    Cats,
    Ratio { segments: usize, test_len: usize },
}

fn default_seeds() -> Vec<u64> {
    vec![0, 1, 2, 3, 4]
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_strategy() -> String {
    "rl".into()
}

fn default_strategies() -> Vec<String> {
    ["rl", "online-nn", "static", "uniform", "each-single-model"]
        .map(String::from)
        .to_vec()
}

fn default_band_size() -> usize {
    1000
}

fn default_smoothing_window() -> usize {
    5
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataConfig,
    #[serde(default)]
    pub split: SplitConfig,
    pub forecasters: Vec<ForecasterSpec>,
    #[serde(default)]
    pub rl: RlConfig,
    #[serde(default)]
    pub online_nn: OnlineNNConfig,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    #[serde(default)]
    pub feedback: FeedbackMode,
    #[serde(default)]
    pub lag_fill: LagFill,
    /// Strategy used by `forecast`.
    #[serde(default = "default_strategy")]
    pub strategy: String,
    /// Strategies compared by `compare`.
    #[serde(default = "default_strategies")]
    pub strategies: Vec<String>,
    #[serde(default = "default_band_size")]
    pub band_size: usize,
    #[serde(default = "default_smoothing_window")]
    pub smoothing_window: usize,
}

impl RunConfig {
    /// Reads a config file, or the config embedded in a run manifest.
    /// Relative data paths are taken relative to the file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let value: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), e))?;
        let is_manifest = value.get("manifest_version").is_some();
        let mut config: RunConfig = if is_manifest {
            let manifest: crate::runner::Manifest =
                serde_json::from_value(value).map_err(|e| Error::json(path.display().to_string(), e))?;
            manifest.config
        } else {
            serde_json::from_value(value).map_err(|e| Error::json(path.display().to_string(), e))?
        };
        if !is_manifest {
            let base = path.parent().unwrap_or(Path::new("."));
            config.resolve_paths(base);
        }
        Ok(config)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::json("run config", e))
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let DataConfig::Csv { path, truth_path, .. } = &mut self.data {
            fix(path);
            if let Some(t) = truth_path {
                fix(t);
            }
        }
    }

    pub fn settings(&self) -> RunSettings {
        RunSettings {
            rl: self.rl.clone(),
            online_nn: self.online_nn.clone(),
            feedback: self.feedback,
            lag_fill: self.lag_fill,
            band_size: self.band_size,
            smoothing_window: self.smoothing_window,
        }
    }

    pub fn model_names(&self) -> Vec<String> {
        self.forecasters.iter().map(ForecasterSpec::display_name).collect()
    }

    pub fn compare_strategies(&self) -> Result<Vec<Strategy>> {
        parse_strategies(&self.strategies, &self.model_names())
    }

    pub fn forecast_strategy(&self) -> Result<Strategy> {
        let mut parsed = parse_strategies(std::slice::from_ref(&self.strategy), &self.model_names())?;
        if parsed.len() != 1 {
            return Err(Error::Parameter(format!(
                "forecast needs exactly one strategy, {:?} names {}",
                self.strategy,
                parsed.len()
            )));
        }
        Ok(parsed.remove(0))
    }

    /// Checks every field before any data is read or model trained.
    pub fn validate(&self) -> Result<()> {
        self.settings().validate()?;
        check_specs(&self.forecasters)?;
        if self.seeds.is_empty() {
            return Err(Error::Parameter("seeds must not be empty".into()));
        }
        self.compare_strategies()?;
        self.forecast_strategy()?;
        if let SplitConfig::Ratio { segments, test_len } = self.split {
            if segments == 0 || test_len == 0 {
                return Err(Error::Parameter("ratio split needs positive segments and test_len".into()));
            }
        }
        match &self.data {
            DataConfig::Csv { sentinel, .. } => {
                if sentinel.is_some_and(|s| !s.is_finite()) {
                    return Err(Error::Parameter("data.sentinel must be finite".into()));
                }
            }
            DataConfig::Synthetic { segments, .. } => {
                if segments.is_empty() {
                    return Err(Error::Parameter("data.segments must not be empty".into()));
                }
            }
        }
        Ok(())
    }

    /// The complete series the config describes, when it is fully known.
    pub fn complete_series(&self) -> Result<Option<TimeSeries>> {
        match &self.data {
            DataConfig::Synthetic { segments, seed } => synth_regimes(segments, *seed).map(Some),
            DataConfig::Csv { path, sentinel, .. } => {
                let series = load_csv(path, missing_policy(*sentinel))?;
                Ok(series.missing_blocks().is_empty().then_some(series))
            }
        }
    }

    pub fn dataset(&self) -> Result<Dataset> {
        let split = |s: &TimeSeries| -> Result<SplitPlan> {
            match self.split {
                SplitConfig::Cats => {
                    if s.missing_blocks().is_empty() {
                        cats_split(&s.masked(&cats_missing_blocks())?)
                    } else {
                        cats_split(s)
                    }
                }
                SplitConfig::Ratio { segments, test_len } => ratio_split(s, segments, test_len),
            }
        };
        match &self.data {
            DataConfig::Synthetic { segments, seed } => {
                let series = synth_regimes(segments, *seed)?;
                let plan = split(&series)?;
                Dataset::from_complete(series, plan)
            }
            DataConfig::Csv {
                path,
                sentinel,
                truth_path,
            } => {
                let series = load_csv(path, missing_policy(*sentinel))?;
                let plan = split(&series)?;
                if series.missing_blocks().is_empty() {
                    return Dataset::from_complete(series, plan);
                }
                let truth = truth_path
                    .as_deref()
                    .map(|p| load_csv(p, MissingPolicy::EmptyCell))
                    .transpose()?;
                Dataset::new(series, truth, plan)
            }
        }
    }
}

fn missing_policy(sentinel: Option<f64>) -> MissingPolicy {
    sentinel.map_or(MissingPolicy::EmptyCell, MissingPolicy::Sentinel)
}
