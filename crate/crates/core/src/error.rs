use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Input outside the mathematical domain of an operation (zero-area box,
    /// singular transform, ...).
    #[error("domain error: {0}")]
    Domain(String),

    /// Input data parsed but violates a documented invariant.
    #[error("validation error: {0}")]
    Validation(String),

    #[error("CRS mismatch: {left} ({left_source}) vs {right} ({right_source})")]
    CrsMismatch {
        left: String,
        left_source: String,
        right: String,
        right_source: String,
    },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A file exists but could not be decoded.
    #[error("format error in {path}: {msg}")]
    Format { path: PathBuf, msg: String },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(path: impl Into<PathBuf>, msg: impl std::fmt::Display) -> Self {
        Error::Format {
            path: path.into(),
            msg: msg.to_string(),
        }
    }

    /// True for errors caused by bad user input rather than the environment.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Domain(_) | Error::Validation(_) | Error::CrsMismatch { .. }
        )
    }
}
