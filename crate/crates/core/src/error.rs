use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = DmaeError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum DmaeError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: {message}")]
    MalformedRecord { line: usize, message: String },

    #[error("line {line}: label must be 0 or 1, got {value:?}")]
    InvalidLabel { line: usize, value: String },

    #[error("embedding file: {0}")]
    EmbeddingFormat(String),

    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("index {index} out of range (limit {limit})")]
    OutOfRange { index: usize, limit: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("missing parameter tensor `{0}`")]
    MissingParameter(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("{0} is undefined: input needs at least one positive and one negative label")]
    SingleClass(&'static str),

    #[error("{0}: empty input")]
    EmptyInput(&'static str),

    #[error("non-finite loss at epoch {epoch}, step {step}: {value}")]
    NonFiniteLoss { epoch: usize, step: usize, value: f64 },

    #[error("gradient check failed for: {}", .0.join(", "))]
    GradientCheck(Vec<String>),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("plot: {0}")]
    Plot(String),
}

impl DmaeError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }

    /// Numerical failures map to exit status 2, everything else to 1.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Self::NonFiniteLoss { .. } | Self::GradientCheck(_))
    }
}
