use std::path::{Path, PathBuf};

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse error category, used for CLI exit codes and test assertions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Input,
    DegenerateVector,
    Config,
    Dataset,
    Integrity,
    Corruption,
    Training,
    Io,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("input error: {0}")]
    Input(String),
    #[error("degenerate vector: {0}")]
    DegenerateVector(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("dataset error: {0}")]
    Dataset(String),
    #[error("integrity error: {0}")]
    Integrity(String),
    #[error("corrupt data: {0}")]
    Corruption(String),
    #[error("training error: {0}")]
    Training(String),
    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Input(_) => ErrorKind::Input,
            Error::DegenerateVector(_) => ErrorKind::DegenerateVector,
            Error::Config(_) => ErrorKind::Config,
            Error::Dataset(_) => ErrorKind::Dataset,
            Error::Integrity(_) => ErrorKind::Integrity,
            Error::Corruption(_) => ErrorKind::Corruption,
            Error::Training(_) => ErrorKind::Training,
            Error::Io { .. } => ErrorKind::Io,
            Error::Context { source, .. } => source.kind(),
        }
    }

    /// Wraps the error with a location such as a row index or pipeline stage.
    pub fn context(self, context: impl Into<String>) -> Error {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }

    pub(crate) fn io(path: impl AsRef<Path>, source: std::io::Error) -> Error {
        Error::Io {
            path: path.as_ref().to_path_buf(),
            source,
        }
    }
}
