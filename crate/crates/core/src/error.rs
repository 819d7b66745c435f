use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{layer} layer can carry {available} payload bytes, need {needed}")]
    InsufficientCapacity {
        layer: crate::layer::Method,
        available: usize,
        needed: usize,
    },

    #[error("malformed frame")]
    MalformedFrame,

    #[error("transform unavailable: {0}")]
    TransformUnavailable(String),

    #[error("model format: {0}")]
    ModelFormat(String),

    #[error("registry format at line {line}: {reason}")]
    RegistryFormat { line: usize, reason: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
