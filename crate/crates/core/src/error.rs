use std::path::PathBuf;

use thiserror::Error;

/// Errors raised across the simulator.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("empty mini-batch")]
    EmptyBatch,

    #[error("degenerate channel at device {device}: |h^H w| = {gain:e} is below the floor")]
    DegenerateChannel { device: usize, gain: f64 },

    #[error("near-singular aggregation: |sum alpha| = {0:e}")]
    SingularAggregation(f64),

    #[error("learning rate not admissible: {0}")]
    Admissibility(String),

    #[error("transmit power constraint violated: {0}")]
    PowerViolation(String),

    #[error("projection undefined: {0}")]
    ProjectionUndefined(String),

    #[error("gradient evaluated outside its domain: {0}")]
    GradientDomain(String),

    #[error("surrogate evaluation failed: {0}")]
    Evaluation(String),

    #[error("objective increased from {before:e} to {after:e}")]
    NonMonotone { before: f64, after: f64 },

    #[error("IDX format error at byte {offset}: {msg}")]
    Format { offset: usize, msg: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
