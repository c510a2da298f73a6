//! Crate-wide error type.

use thiserror::Error;

/// Convenience alias used across the crate.
pub type Result<T> = std::result::Result<T, Error>;

/// All failure modes surfaced by this crate.
#[derive(Debug, Error)]
pub enum Error {
    /// Tensor or layer dimensions do not line up.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A caller-supplied value is outside its documented domain.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// Malformed input data; `row` is 1-based.
    #[error("parse error at row {row}: {msg}")]
    Parse { row: usize, msg: String },

    /// An API was driven in an unsupported order (e.g. a stale forward cache).
    #[error("usage error: {0}")]
    Usage(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn parse(row: usize, msg: impl Into<String>) -> Self {
        Error::Parse { row, msg: msg.into() }
    }

    pub fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }
}
