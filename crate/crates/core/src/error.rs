use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("vocabulary build failed: {0}")]
    Build(String),

    #[error(transparent)]
    Gateway(#[from] GatewayError),

    #[error("no reliable pseudo-labeled examples at gamma = {gamma}; lower the confidence threshold")]
    EmptyReliableSet { gamma: f64 },

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("artifact mismatch: {0}")]
    Mismatch(String),

    #[error("incomplete artifact: {0}")]
    Incomplete(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn is_budget_exceeded(&self) -> bool {
        matches!(self, Error::Gateway(GatewayError::BudgetExceeded { .. }))
    }
}

/// Failures raised while talking to a classification backend.
#[derive(Debug, Clone, Error)]
pub enum GatewayError {
    /// Network or server failure. Retried with backoff before surfacing.
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },

    #[error("backend call budget of {limit} exhausted")]
    BudgetExceeded { limit: u64 },

    #[error("malformed backend response: {0}")]
    Protocol(String),

    #[error("missing credentials: environment variable {0} is not set")]
    MissingApiKey(String),
}

impl GatewayError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, GatewayError::Transport { .. })
    }
}
