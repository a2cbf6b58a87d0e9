use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {what} (expected {expected}, got {actual})")]
    DimensionMismatch {
        what: &'static str,
        expected: String,
        actual: String,
    },

    #[error("invalid image: {0}")]
    InvalidImage(String),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("{format} format error in {field}: {reason}")]
    Format {
        format: &'static str,
        field: &'static str,
        reason: String,
    },

    #[error("could not synthesize a distorted pair for `{name}` after {restarts} restarts")]
    SynthesisFailure { name: String, restarts: usize },

    #[error("episode protocol violation: {0}")]
    Protocol(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("need at least {needed} items, have {available}")]
    InsufficientData { needed: usize, available: usize },

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn dims(what: &'static str, expected: impl ToString, actual: impl ToString) -> Self {
        Error::DimensionMismatch {
            what,
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }

    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    pub(crate) fn format(format: &'static str, field: &'static str, reason: impl Into<String>) -> Self {
        Error::Format {
            format,
            field,
            reason: reason.into(),
        }
    }
}
