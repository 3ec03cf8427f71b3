use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the crate.
#[derive(Debug, Error)]
pub enum HttError {
    #[error("dimension error: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("incompatible checkpoint or dataset: {0}")]
    Compat(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl HttError {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        HttError::Shape(msg.into())
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        HttError::Invalid(msg.into())
    }

    pub(crate) fn data(msg: impl Into<String>) -> Self {
        HttError::Data(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        HttError::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = HttError> = std::result::Result<T, E>;
