use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error(
        "grid mismatch: expected (T={expected_t}, dt={expected_dt}, channels={expected_channels}), \
         found (T={found_t}, dt={found_dt}, channels={found_channels})"
    )]
    GridMismatch {
        expected_t: f64,
        expected_dt: f64,
        expected_channels: usize,
        found_t: f64,
        found_dt: f64,
        found_channels: usize,
    },

    #[error("channel {channel} out of range (system has {count})")]
    ChannelOutOfRange { channel: usize, count: usize },

    #[error("internal consistency failure: {0}")]
    InternalConsistency(String),

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("convergence failure at s={s:.6e} (J={j:.6e}, step={step:.3e}): {reason}")]
    ConvergenceFailure { s: f64, j: f64, step: f64, reason: String },

    #[error("unsupported query: {0}")]
    UnsupportedQuery(String),

    #[error("ensemble failure: all {members} members failed to converge ({diagnostics})")]
    EnsembleFailure { members: usize, diagnostics: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter { name, reason: reason.into() }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
