use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument or record broke a documented range or shape rule.
    #[error("validation error: {0}")]
    Validation(String),

    #[error("lookup error: {0}")]
    Lookup(String),

    /// Stored data contradicts itself (dangling ids, duplicate pairs, count mismatches).
    #[error("integrity error: {0}")]
    Integrity(String),

    /// A pluggable provider failed. `retriable` failures leave state untouched.
    #[error("provider `{provider}` failed: {message}")]
    Provider {
        provider: String,
        message: String,
        retriable: bool,
    },

    #[error("no applicable operator: {0}")]
    NoOperator(String),

    #[error("conflict: {0}")]
    Conflict(String),

    #[error("snapshot {path}: {message}")]
    Snapshot { path: PathBuf, message: String },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub(crate) fn integrity(msg: impl Into<String>) -> Self {
        Error::Integrity(msg.into())
    }

    pub(crate) fn lookup(msg: impl Into<String>) -> Self {
        Error::Lookup(msg.into())
    }

    pub(crate) fn provider(provider: &str, message: impl Into<String>) -> Self {
        Error::Provider {
            provider: provider.to_string(),
            message: message.into(),
            retriable: true,
        }
    }

    pub(crate) fn snapshot(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Snapshot {
            path: path.into(),
            message: message.into(),
        }
    }

    pub fn is_provider(&self) -> bool {
        matches!(self, Error::Provider { .. })
    }
}
