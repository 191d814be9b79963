use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("failed to access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("empty validation set")]
    EmptySet,

    #[error("instance {0} has no candidates")]
    EmptyInstance(String),

    #[error("unknown source {0:?}")]
    UnknownSource(String),

    #[error("weight {0} is outside [0, 1]")]
    WeightOutOfRange(f64),

    #[error("utility {0} is outside [0, 1]")]
    UtilityOutOfRange(f64),

    #[error("utility {0} is not in the declared value set")]
    UnknownUtility(f64),

    #[error("{what} needs {needed}, limit is {limit}")]
    TooLarge {
        what: &'static str,
        needed: usize,
        limit: usize,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io { .. })
    }
}
