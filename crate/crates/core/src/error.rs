use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch at {context}: expected {expected}, got {actual}")]
    Dimension {
        context: String,
        expected: usize,
        actual: usize,
    },

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("label {label} out of range for {classes} classes (row {row})")]
    Label {
        row: usize,
        label: usize,
        classes: usize,
    },

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("gradient verification failed: {0}")]
    Verification(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("pairing error: {0}")]
    Pairing(String),

    #[error("format error in {location}: {message}")]
    Format { location: String, message: String },

    #[error("length error: expected {expected} entries, found {actual}")]
    Length { expected: usize, actual: usize },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn dim(context: impl Into<String>, expected: usize, actual: usize) -> Self {
        Error::Dimension {
            context: context.into(),
            expected,
            actual,
        }
    }

    pub(crate) fn format(location: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Format {
            location: location.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
