//! Crate-wide error type, mapped onto CLI exit codes by the binary.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed input data or files (dataset bytes, checkpoints, reports).
    #[error("input error: {0}")]
    Input(String),
    /// Invalid configuration values or combinations.
    #[error("configuration error: {0}")]
    Config(String),
    /// API misuse: incongruent shapes, empty inputs where data is required.
    #[error("usage error: {0}")]
    Usage(String),
    /// Non-finite values or other numeric failures.
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
    pub fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }
    pub fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }

    /// Process exit code for the CLI: 2 input/format, 3 configuration, 4 numeric.
    pub fn exit_code(&self) -> u8 {
        match self {
            Error::Input(_) | Error::Io(_) => 2,
            Error::Config(_) | Error::Usage(_) => 3,
            Error::Numeric(_) => 4,
        }
    }
}
