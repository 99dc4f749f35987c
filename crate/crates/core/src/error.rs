//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by the inference toolkit.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid argument: dimension mismatch, non-finite input, bad range.
    #[error("input error: {0}")]
    Input(String),

    /// Operation requested on an object in an unusable state (e.g. empty
    /// evaluation sets).
    #[error("state error: {0}")]
    State(String),

    /// Numerical failure: non-finite intermediate, singular system,
    /// degenerate weights.
    #[error("numerical error: {0}")]
    Numerical(String),

    /// Operation not defined for the given variational family.
    #[error("unsupported family: {0}")]
    UnsupportedFamily(String),

    /// Invalid experiment configuration.
    #[error("config error: {0}")]
    Config(String),

    /// Model evaluation budget exhausted before the run could finish.
    #[error("budget exhausted: {0}")]
    BudgetExhausted(String),

    /// Forward-model evaluation failed for the listed batch rows.
    #[error("model evaluation failed for rows {rows:?}")]
    FailedRows { rows: Vec<usize> },

    /// Filesystem or serialization failure.
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    /// CSV read/write failure.
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    /// JSON read/write failure.
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub(crate) fn state(msg: impl Into<String>) -> Self {
        Error::State(msg.into())
    }

    pub(crate) fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
