use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use ensemble_rl::pipeline::FeedbackMode;
use ensemble_rl::runner::{cmd_compare, cmd_forecast, cmd_synth, cmd_train};
use ensemble_rl::{Error, ErrorClass, RunConfig};

/// RL-weighted forecasting ensembles.
#[derive(Parser)]
#[command(name = "ensemble-rl", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the forecasters, the controller and the baselines.
    Train(Common),
    /// Predict the test blocks from trained artifacts.
    Forecast {
        #[command(flatten)]
        common: Common,
        /// Directory holding the `train` artifacts (default: the output directory).
        #[arg(long)]
        artifacts: Option<PathBuf>,
    },
    /// Score every strategy over every seed.
    Compare(Common),
    /// Write the configured series as CSV.
    Synth(Common),
}

#[derive(Args)]
struct Common {
    /// Run config, or a manifest written by an earlier run.
    #[arg(long)]
    config: PathBuf,
    /// Use this single seed instead of the configured list.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// rl, online-nn, static, uniform or single:<model>.
    #[arg(long)]
    strategy: Option<String>,
    #[arg(long, value_parser = ["true-value", "proxy"])]
    feedback: Option<String>,
}

impl Common {
    fn load(&self) -> anyhow::Result<RunConfig> {
        let mut config = RunConfig::load(&self.config)
            .with_context(|| format!("loading {}", self.config.display()))?;
        if let Some(seed) = self.seed {
            config.seeds = vec![seed];
        }
        if let Some(out) = &self.out {
            config.out_dir = out.clone();
        }
        if let Some(s) = &self.strategy {
            config.strategy = s.clone();
        }
        if let Some(f) = &self.feedback {
            config.feedback = f.parse::<FeedbackMode>()?;
        }
        Ok(config)
    }
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    match cli.command {
        Command::Train(common) => {
            let manifest = cmd_train(&common.load()?)?;
            println!(
                "trained {} artifacts into {}",
                manifest.artifacts.len(),
                manifest.config.out_dir.display()
            );
        }
        Command::Forecast { common, artifacts } => {
            let config = common.load()?;
            let (_, run) = cmd_forecast(&config, artifacts.as_deref())?;
            println!(
                "{} predictions with strategy {} written to {}",
                run.predictions.len(),
                run.strategy,
                config.out_dir.display()
            );
        }
        Command::Compare(common) => {
            let (_, cmp) = cmd_compare(&common.load()?)?;
            print!("{}", cmp.report.to_text());
            if cmp.report.any_failed() {
                eprintln!("error: at least one strategy failed; see report.json");
                return Ok(ExitCode::from(3));
            }
        }
        Command::Synth(common) => {
            let manifest = cmd_synth(&common.load()?)?;
            println!("series written to {}", manifest.config.out_dir.display());
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            let class = e.chain().find_map(|c| c.downcast_ref::<Error>()).map(Error::class);
            ExitCode::from(match class {
                Some(ErrorClass::Numeric) => 3,
                Some(ErrorClass::Io) => 4,
                _ => 2,
            })
        }
    }
}
