//! Error types shared across the toolkit.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration (bad spec combination, unknown key, malformed file).
    #[error("config error: {0}")]
    Config(String),

    /// An operation received arguments that violate its contract.
    #[error("validation error: {0}")]
    Validation(String),

    /// An API was used out of sequence (e.g. stepping a finished episode).
    #[error("usage error: {0}")]
    Usage(String),

    /// Stored data is inconsistent (out-of-order episodes, malformed transitions).
    #[error("data integrity error: {0}")]
    DataIntegrity(String),

    /// A checkpoint or frozen policy failed its digest check.
    #[error("integrity failure: {0}")]
    Integrity(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
