use std::path::PathBuf;

use promptcs_tensor::TensorError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed {what}: {message}")]
    Parse { what: String, message: String },
    #[error("invalid graph: {0}")]
    Graph(String),
    #[error("invalid query: {0}")]
    Query(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("training diverged: {0}")]
    NonFinite(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(what: impl Into<String>, err: impl std::fmt::Display) -> Self {
        Error::Parse {
            what: what.into(),
            message: err.to_string(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
