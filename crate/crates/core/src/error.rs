use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, DiregError>;

#[derive(Debug, Error)]
pub enum DiregError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("I/O error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed file {path}: {message}")]
    Format { path: PathBuf, message: String },
}

impl DiregError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        DiregError::InvalidArgument(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        DiregError::Io {
            path: path.into(),
            source,
        }
    }
}
