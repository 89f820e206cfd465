use std::path::PathBuf;

use crate::combiner::WeightVector;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("parse error at row {row}: {message}")]
    Parse { row: usize, message: String },

    #[error("structure error: {0}")]
    Structure(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("training failed for {model}: {message}")]
    Training { model: String, message: String },

    #[error("numeric failure in {model}: {message}")]
    Numeric { model: String, message: String },

    /// `|y|` fell below the configured epsilon, so the relative error is undefined.
    #[error("degenerate denominator: |y| = {value:e} is below {epsilon:e}")]
    DegenerateDenominator { value: f64, epsilon: f64 },

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("optimization did not converge after {iterations} iterations (gradient norm {gradient_norm:e})")]
    Optimization {
        iterations: usize,
        gradient_norm: f64,
        best: WeightVector,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },
}

/// Broad failure classes, used by the command line to pick an exit code.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ErrorClass {
    Validation,
    Numeric,
    Io,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Parse { .. }
            | Error::Structure(_)
            | Error::Parameter(_)
            | Error::Contract(_) => ErrorClass::Validation,
            Error::Training { .. }
            | Error::Numeric { .. }
            | Error::DegenerateDenominator { .. }
            | Error::UndefinedMetric(_)
            | Error::Optimization { .. } => ErrorClass::Numeric,
            Error::Io { .. } | Error::Json { .. } => ErrorClass::Io,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(context: impl Into<String>, source: serde_json::Error) -> Self {
        Error::Json {
            context: context.into(),
            source,
        }
    }
}
