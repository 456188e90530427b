use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error: {0}")]
    Parse(String),

    /// A document parsed but does not match the expected shape.
    #[error("schema violation at `{key}`: {reason}")]
    Schema { key: String, reason: String },

    /// A value is well-formed but outside its allowed domain.
    #[error("invalid value for `{key}`: {reason}")]
    Invariant { key: String, reason: String },

    #[error("incompatible artifact: {0}")]
    Incompatible(String),

    #[error("{0}")]
    Domain(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn schema(key: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Schema {
            key: key.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn invariant(key: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Invariant {
            key: key.into(),
            reason: reason.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
