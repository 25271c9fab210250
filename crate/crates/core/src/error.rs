//! Error types shared across the crate.

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration value; fatal before any work starts.
    #[error("config error: {0}")]
    Config(String),

    /// Tensor shapes or layer counts do not line up.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// A message crossing a module boundary violates its contract.
    #[error("protocol error: {0}")]
    Protocol(String),

    /// A run failed after it started (diverged loss, I/O failure, ...).
    #[error("runtime error: {0}")]
    Runtime(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn dimension(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub fn protocol(msg: impl Into<String>) -> Self {
        Error::Protocol(msg.into())
    }

    pub fn runtime(msg: impl Into<String>) -> Self {
        Error::Runtime(msg.into())
    }
}
