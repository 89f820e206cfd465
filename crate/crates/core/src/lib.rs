//! Time-series forecasting with an ensemble whose per-sample weights are
//! chosen online by a tabular actor-critic controller.
//!
//! The crate covers the whole path: loading and splitting series,
//! training base forecasters, combining them, learning the weighting
//! policy, the baseline weighting schemes, and evaluation.

pub mod baselines;
pub mod combiner;
pub mod config;
pub mod controller;
pub mod error;
pub mod eval;
pub mod forecast;
pub mod nn;
pub mod pipeline;
pub mod runner;
pub mod seed;
pub mod series;

pub use combiner::{combine, WeightVector};
pub use config::RunConfig;
pub use controller::{PolicyModel, RlConfig};
pub use error::{Error, ErrorClass, Result};
pub use eval::{nmse, EvalReport};
pub use forecast::{Forecaster, ForecasterKind, ForecasterSpec};
pub use series::{IndexRange, SplitPlan, TimeSeries};
