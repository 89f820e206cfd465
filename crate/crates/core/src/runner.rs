//! The `train`, `forecast`, `compare` and `synth` commands. Each writes its
//! artifacts plus a manifest into the configured output directory.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::baselines::{fit_static_weights, OnlineNNWeighter};
use crate::combiner::WeightVector;
use crate::config::RunConfig;
use crate::controller::{episode_csv, PolicyModel};
use crate::error::{Error, Result};
use crate::eval::{line_chart_svg, smooth, Timings};
use crate::forecast::Forecaster;
use crate::pipeline::{
    compare_strategies, fit_forecasters, fixed_weights, infer_rl, online_nn_run, train_online_nn, train_rl,
    Comparison, Prepared, Strategy, StrategyRun,
};
use crate::series::save_csv;

pub const MANIFEST_VERSION: u32 = 1;

/// Written next to every run's artifacts. The embedded config (with the
/// seeds actually used) is enough to repeat the run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub manifest_version: u32,
    pub command: String,
    pub package_version: String,
    pub config: RunConfig,
    /// `complete`, or `partial` when the command stopped with an error.
    pub status: String,
    #[serde(default)]
    pub error: Option<String>,
    /// Relative artifact path to its SHA-256.
    pub artifacts: BTreeMap<String, String>,
}

pub const TRAIN_MANIFEST: &str = "manifest.json";
pub const FORECAST_MANIFEST: &str = "forecast_manifest.json";
pub const COMPARE_MANIFEST: &str = "compare_manifest.json";
pub const SYNTH_MANIFEST: &str = "synth_manifest.json";

struct ArtifactWriter {
    dir: PathBuf,
    hashes: BTreeMap<String, String>,
}

impl ArtifactWriter {
    fn new(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            hashes: BTreeMap::new(),
        })
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<PathBuf> {
        let path = self.dir.join(name);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        std::fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        self.hashes.insert(name.to_string(), hex::encode(Sha256::digest(bytes)));
        Ok(path)
    }

    fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<PathBuf> {
        let text = serde_json::to_string_pretty(value).map_err(|e| Error::json(name, e))?;
        self.write(name, text.as_bytes())
    }

    /// Records the manifest; a failed command leaves a `partial` one behind.
    fn finish<T>(self, command: &str, config: &RunConfig, result: Result<T>, file: &str) -> Result<(T, Manifest)> {
        let manifest = Manifest {
            manifest_version: MANIFEST_VERSION,
            command: command.to_string(),
            package_version: env!("CARGO_PKG_VERSION").to_string(),
            config: config.clone(),
            status: if result.is_ok() { "complete" } else { "partial" }.to_string(),
            error: result.as_ref().err().map(ToString::to_string),
            artifacts: self.hashes,
        };
        let path = self.dir.join(file);
        let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::json(file, e))?;
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        result.map(|v| (v, manifest))
    }
}

fn model_file(name: &str) -> String {
    format!("models/{name}.json")
}

pub const POLICY_FILE: &str = "policy.json";
pub const POLICY_UPDATED_FILE: &str = "policy_updated.json";
pub const EPISODES_FILE: &str = "episodes.csv";
pub const ONLINE_NN_FILE: &str = "online_nn.json";
pub const ONLINE_NN_FINAL_FILE: &str = "online_nn_final_weights.json";
pub const STATIC_FILE: &str = "static_weights.json";
pub const PREDICTIONS_FILE: &str = "predictions.csv";

/// Fits the forecasters, the controller and both baselines on the training
/// segments, using the first seed.
pub fn cmd_train(config: &RunConfig) -> Result<Manifest> {
    config.validate()?;
    let mut out = ArtifactWriter::new(&config.out_dir)?;
    let result = train_into(config, &mut out);
    out.finish("train", config, result, TRAIN_MANIFEST).map(|(_, m)| m)
}

fn train_into(config: &RunConfig, out: &mut ArtifactWriter) -> Result<()> {
    let seed = config.seeds[0];
    let settings = config.settings();
    let dataset = config.dataset()?;
    let models = fit_forecasters(&config.forecasters, &dataset, seed)?;
    for m in &models {
        out.write_json(&model_file(&m.name), m)?;
    }
    let prepared = Prepared::new(&dataset, models)?;

    let (policy, logs, _) = train_rl(&prepared, &dataset, &settings, seed)?;
    out.write_json(POLICY_FILE, &policy)?;
    out.write(EPISODES_FILE, episode_csv(&logs).as_bytes())?;

    let (nn, history, _) = train_online_nn(&prepared, &settings, seed)?;
    out.write_json(ONLINE_NN_FILE, &nn)?;
    let last = history
        .last()
        .cloned()
        .unwrap_or_else(|| WeightVector::uniform(prepared.models.len()));
    out.write_json(ONLINE_NN_FINAL_FILE, &last)?;

    let weights = fit_static_weights(&prepared.train_panel, &prepared.train_truth)?;
    out.write_json(STATIC_FILE, &weights)?;
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), e))
}

fn predictions_csv(predictions: &[(usize, f64)]) -> String {
    let mut out = String::from("index,prediction\n");
    for (i, p) in predictions {
        writeln!(out, "{i},{p}").unwrap();
    }
    out
}

/// Predicts the test blocks with one strategy from the artifacts of a
/// previous `train`. `artifacts` defaults to the output directory.
pub fn cmd_forecast(config: &RunConfig, artifacts: Option<&Path>) -> Result<(Manifest, StrategyRun)> {
    config.validate()?;
    let strategy = config.forecast_strategy()?;
    let dir = artifacts.unwrap_or(&config.out_dir).to_path_buf();
    let mut out = ArtifactWriter::new(&config.out_dir)?;
    let result = forecast_into(config, &strategy, &dir, &mut out);
    out.finish("forecast", config, result, FORECAST_MANIFEST)
        .map(|(run, m)| (m, run))
}

fn forecast_into(config: &RunConfig, strategy: &Strategy, dir: &Path, out: &mut ArtifactWriter) -> Result<StrategyRun> {
    let settings = config.settings();
    let dataset = config.dataset()?;
    let models = config
        .model_names()
        .iter()
        .map(|name| {
            let m = Forecaster::load(&dir.join(model_file(name)))?;
            if &m.name != name {
                return Err(Error::Contract(format!("model file for {name:?} holds {:?}", m.name)));
            }
            Ok(m)
        })
        .collect::<Result<Vec<_>>>()?;
    let prepared = Prepared::new(&dataset, models)?;
    let run = match strategy {
        Strategy::Rl => {
            let trained = PolicyModel::load(&dir.join(POLICY_FILE))?;
            let mut adapted = trained.clone();
            let (inference, per_step) =
                infer_rl(&mut adapted, &prepared.models, &dataset, &settings, prepared.fallback_variance)?;
            out.write_json(POLICY_UPDATED_FILE, &adapted)?;
            StrategyRun {
                strategy: Strategy::Rl,
                predictions: inference.predictions,
                weights: inference.steps.into_iter().map(|s| s.weights).collect(),
                seconds_per_step: Some(per_step),
                rl: None,
            }
        }
        Strategy::OnlineNn => {
            let nn = OnlineNNWeighter::load(&dir.join(ONLINE_NN_FILE))?;
            let last: WeightVector = read_json(&dir.join(ONLINE_NN_FINAL_FILE))?;
            online_nn_run(&nn, &last, settings.online_nn.test_mode, &prepared)?
        }
        Strategy::Static => {
            let w: WeightVector = read_json(&dir.join(STATIC_FILE))?;
            if w.len() != prepared.models.len() {
                return Err(Error::Contract("static weights do not match the forecasters".into()));
            }
            fixed_weights(Strategy::Static, &prepared, &w)?
        }
        Strategy::Uniform | Strategy::Single(_) => {
            crate::pipeline::run_strategy(strategy, &prepared, &dataset, &settings, config.seeds[0])?
        }
    };
    out.write(PREDICTIONS_FILE, predictions_csv(&run.predictions).as_bytes())?;
    Ok(run)
}

/// Runs every configured strategy over every seed and writes the report,
/// reward curve, predictions, band table and charts.
pub fn cmd_compare(config: &RunConfig) -> Result<(Manifest, Comparison)> {
    config.validate()?;
    let mut out = ArtifactWriter::new(&config.out_dir)?;
    let result = compare_into(config, &mut out);
    out.finish("compare", config, result, COMPARE_MANIFEST)
        .map(|(c, m)| (m, c))
}

fn compare_into(config: &RunConfig, out: &mut ArtifactWriter) -> Result<Comparison> {
    let dataset = config.dataset()?;
    let strategies = config.compare_strategies()?;
    let cmp = compare_strategies(&dataset, &config.forecasters, &strategies, &config.seeds, &config.settings())?;
    let report = &cmp.report;

    out.write("report.json", report.to_json()?.as_bytes())?;
    let mut stable = report.clone();
    stable.runtime_per_step = Timings::default();
    out.write("report.txt", stable.to_text().as_bytes())?;
    // Wall-clock numbers change between runs, so they are not hashed.
    let timings = serde_json::to_string_pretty(&report.runtime_per_step).map_err(|e| Error::json("timings", e))?;
    let timings_path = config.out_dir.join("timings.json");
    std::fs::write(&timings_path, timings).map_err(|e| Error::io(&timings_path, e))?;

    // Reward curve: raw and smoothed totals per episode, one column pair per seed.
    let mut rewards = String::from("episode");
    for s in &report.seeds {
        write!(rewards, ",total_seed_{s},smoothed_seed_{s}").unwrap();
    }
    rewards.push('\n');
    let smoothed: Vec<Vec<f64>> = report
        .episode_rewards
        .iter()
        .map(|r| smooth(r, report.smoothing_window))
        .collect();
    let episodes = report.episode_rewards.iter().map(Vec::len).max().unwrap_or(0);
    for e in 0..episodes {
        write!(rewards, "{}", e + 1).unwrap();
        for (raw, sm) in report.episode_rewards.iter().zip(&smoothed) {
            match (raw.get(e), sm.get(e)) {
                (Some(r), Some(s)) => write!(rewards, ",{r},{s}").unwrap(),
                _ => rewards.push_str(",,"),
            }
        }
        rewards.push('\n');
    }
    out.write("rewards.csv", rewards.as_bytes())?;
    let reward_lines: Vec<(String, Vec<(f64, f64)>)> = report
        .seeds
        .iter()
        .zip(&smoothed)
        .filter(|(_, s)| !s.is_empty())
        .map(|(seed, s)| {
            (
                format!("seed {seed}"),
                s.iter().enumerate().map(|(i, v)| ((i + 1) as f64, *v)).collect(),
            )
        })
        .collect();
    out.write(
        "rewards.svg",
        line_chart_svg("Smoothed total reward per episode", "episode", &reward_lines).as_bytes(),
    )?;

    // Test predictions of the first seed next to the truth.
    let truth = dataset.test_truth()?;
    let indices = dataset.plan.test_indices();
    let first = &cmp.runs[0];
    let mut pred = String::from("index,truth");
    let mut ok_runs: Vec<(&Strategy, &StrategyRun)> = Vec::new();
    for (s, r) in &first.runs {
        if let Ok(r) = r {
            write!(pred, ",{s}").unwrap();
            ok_runs.push((s, r));
        }
    }
    pred.push('\n');
    for (k, (i, y)) in indices.iter().zip(&truth).enumerate() {
        write!(pred, "{i},{y}").unwrap();
        for (_, r) in &ok_runs {
            write!(pred, ",{}", r.predictions[k].1).unwrap();
        }
        pred.push('\n');
    }
    out.write(PREDICTIONS_FILE, pred.as_bytes())?;
    let mut lines = vec![(
        "truth".to_string(),
        indices.iter().zip(&truth).map(|(i, y)| (*i as f64, *y)).collect::<Vec<_>>(),
    )];
    for (s, r) in ok_runs.iter().filter(|(s, _)| matches!(s, Strategy::Rl | Strategy::OnlineNn)) {
        lines.push((s.to_string(), r.predictions.iter().map(|(i, p)| (*i as f64, *p)).collect()));
    }
    out.write(
        "predictions.svg",
        line_chart_svg("Test predictions (first seed)", "index", &lines).as_bytes(),
    )?;

    let mut bands = String::from("start,end,dominant,share");
    for name in &first.models {
        write!(bands, ",share_{name}").unwrap();
    }
    bands.push('\n');
    for b in &report.band_dominance {
        write!(bands, "{},{},{},{}", b.start, b.end, b.model_name, b.share).unwrap();
        for s in &b.shares {
            write!(bands, ",{s}").unwrap();
        }
        bands.push('\n');
    }
    out.write("bands.csv", bands.as_bytes())?;

    if let Some(rl) = first.run(&Strategy::Rl).and_then(|r| r.rl.as_ref()) {
        let trace = rl.weight_trace(dataset.plan.episodes_per_pass);
        let weight_lines: Vec<(String, Vec<(f64, f64)>)> = first
            .models
            .iter()
            .enumerate()
            .map(|(m, name)| {
                let pts = trace
                    .iter()
                    .map(|s| (s.time_index as f64, s.weights.as_slice()[m]))
                    .collect();
                (name.clone(), pts)
            })
            .collect();
        out.write(
            "weights.svg",
            line_chart_svg("Controller weights (first seed)", "index", &weight_lines).as_bytes(),
        )?;
    }
    Ok(cmp)
}

/// Writes the configured series: `series.csv` complete and `observed.csv`
/// with the test blocks left empty.
pub fn cmd_synth(config: &RunConfig) -> Result<Manifest> {
    config.validate()?;
    let mut out = ArtifactWriter::new(&config.out_dir)?;
    let result = (|| {
        let dataset = config.dataset()?;
        for (name, series) in [("series.csv", dataset.truth.as_ref()), ("observed.csv", Some(&dataset.observed))] {
            if let Some(series) = series {
                let tmp = config.out_dir.join(format!(".{name}.tmp"));
                save_csv(series, &tmp)?;
                let bytes = std::fs::read(&tmp).map_err(|e| Error::io(&tmp, e))?;
                std::fs::remove_file(&tmp).map_err(|e| Error::io(&tmp, e))?;
                out.write(name, &bytes)?;
            }
        }
        Ok(())
    })();
    out.finish("synth", config, result, SYNTH_MANIFEST).map(|(_, m)| m)
}
