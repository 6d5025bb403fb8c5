use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("schema error at line {line}: {message}")]
    Schema { line: usize, message: String },

    #[error("invariant violation at line {line}: {message}")]
    Invariant { line: usize, message: String },

    #[error("invalid criteria field `{field}`: {reason}")]
    InvalidCriteria { field: String, reason: String },

    #[error("data integrity error: {0}")]
    DataIntegrity(String),

    #[error("lookup error: {0}")]
    Lookup(String),

    #[error("degenerate labels: {0}")]
    DegenerateLabels(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("encoding error: {0}")]
    Encoding(String),

    #[error("train and evaluation splits overlap ({0} shared campaigns)")]
    OverlappingSplits(usize),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn criteria(field: &str, reason: impl Into<String>) -> Self {
        Error::InvalidCriteria {
            field: field.to_string(),
            reason: reason.into(),
        }
    }
}
