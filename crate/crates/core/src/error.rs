use thiserror::Error;

use crate::report::{Stage, StageReport};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unsupported Matérn smoothness ν = {0} (supported: 0.5, 1.5, 2.5)")]
    UnsupportedSmoothness(f64),

    #[error("matrix is not positive semidefinite: eigenvalue {eigenvalue:e} with largest eigenvalue {max:e}")]
    NotPositiveSemidefinite { eigenvalue: f64, max: f64 },

    #[error("grid mismatch: expected {expected} points, found {found}")]
    GridMismatch { expected: usize, found: usize },

    #[error("invalid angular frequency {0} rad/s (must be > 0)")]
    InvalidFrequency(f64),

    #[error("degenerate medium: relative permittivity is zero")]
    DegenerateMedium,

    #[error("channel index {index} out of range for {channels} channels")]
    InvalidChannel { index: usize, channels: usize },

    #[error("undefined metric: {0}")]
    UndefinedMetric(&'static str),

    #[error("insufficient samples: need at least {required}, found {found}")]
    InsufficientSamples { required: usize, found: usize },

    #[error("invalid truncation order {order} (available modes: {available})")]
    InvalidTruncation { order: usize, available: usize },

    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },

    #[error("invalid `{field}`: {reason}")]
    InvalidConfig { field: String, reason: String },

    #[error("config parse error: {0}")]
    ConfigParse(String),

    #[error("report format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("stage {stage} failed: {source}")]
    Stage {
        stage: Stage,
        partial: Vec<StageReport>,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidConfig {
            field: field.into(),
            reason: reason.into(),
        }
    }
}

impl From<csv::Error> for Error {
    fn from(err: csv::Error) -> Self {
        Error::Format(err.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(err: serde_json::Error) -> Self {
        Error::Format(err.to_string())
    }
}
