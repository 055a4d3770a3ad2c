//! Error taxonomy for the whole crate.

use thiserror::Error;

/// Unified error type.
#[derive(Debug, Error)]
pub enum Error {
    /// Tensor shapes are incompatible for the requested operation.
    #[error("shape error: {0}")]
    Shape(String),

    /// A value is outside the domain an operation requires.
    #[error("domain error: {0}")]
    Domain(String),

    /// An API contract was violated (wrong call order, missing state, bad mode).
    #[error("contract error: {0}")]
    Contract(String),

    /// Input data is malformed or inconsistent.
    #[error("data error: {0}")]
    Data(String),

    /// A numeric failure (NaN/Inf) was detected.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Underlying I/O failure.
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    /// (De)serialization failure.
    #[error("serialization error: {0}")]
    Serde(String),
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serde(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Data(e.to_string())
    }
}

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code for the CLI: usage/contract errors map to 2,
    /// data/shape/io errors to 3, numeric failures to 4.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Contract(_) | Error::Domain(_) => 2,
            Error::Shape(_) | Error::Data(_) | Error::Io(_) | Error::Serde(_) => 3,
            Error::Numeric(_) => 4,
        }
    }
}
