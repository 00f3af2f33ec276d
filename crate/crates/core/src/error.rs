//! Crate-wide error type.

/// Errors produced by corpus ingestion, simulation, training, and evaluation.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Malformed input at a specific line of a text stream.
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    /// Input data violates a documented contract (coverage, ranges, shapes).
    #[error("validation error: {0}")]
    Validation(String),

    /// A caller-supplied argument is out of range or inconsistent.
    #[error("invalid argument: {0}")]
    Argument(String),

    /// A run configuration is internally inconsistent.
    #[error("configuration error: {0}")]
    Config(String),

    /// Model fitting failed (empty data, diverging loss, ...).
    #[error("training error: {0}")]
    Training(String),

    /// A statistical estimator failed to produce a finite value.
    #[error("estimation error: {0}")]
    Estimation(String),

    /// An API was used outside its documented calling convention.
    #[error("contract violation: {0}")]
    Contract(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
