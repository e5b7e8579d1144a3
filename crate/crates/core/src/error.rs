use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A numerical procedure did not converge or ran out of range.
    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("degenerate weight: {0}")]
    DegenerateWeight(String),

    /// The computed structure contradicts what the theory allows
    /// (e.g. a non-contiguous blow-up set).
    #[error("structural error: {0}")]
    Structural(String),

    /// A monotone-predicate bisection saw the predicate flip back.
    #[error("non-monotone predicate: {message} (witnesses: {witnesses:?})")]
    NonMonotone { message: String, witnesses: Vec<f64> },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
