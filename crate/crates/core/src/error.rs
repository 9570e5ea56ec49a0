use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("duplicate entry for date {date} and ticker {ticker} (line {line})")]
    Conflict {
        date: String,
        ticker: String,
        line: usize,
    },

    #[error("line {line}: {message}")]
    Validation { line: usize, message: String },

    #[error("every ticker was dropped by the completeness filter")]
    EmptyUniverse,

    #[error("ticker {0} has no observed prices")]
    NoObservations(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("constant return columns: {}", .0.join(", "))]
    DegenerateColumns(Vec<String>),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("non-finite value at step {step}, neuron {neuron}")]
    Numeric { step: usize, neuron: usize },

    #[error("training diverged at epoch {epoch}: non-finite loss")]
    Diverged { epoch: usize },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("config: {0}")]
    Config(String),

    #[error("{stage} failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn at_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}
