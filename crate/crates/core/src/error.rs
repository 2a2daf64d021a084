use std::path::PathBuf;

/// Errors produced by the smoother library and harness.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Shapes, lengths or indices that do not fit together.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A scenario or parameter set that violates a documented constraint.
    #[error("invalid field `{field}`: {message}")]
    Validation { field: String, message: String },

    /// The requested computation does not apply to this instance
    /// (for example a brute-force oracle asked to handle a nonlinear map).
    #[error("unsupported instance: {0}")]
    Unsupported(String),

    /// A numerical procedure failed to produce a usable result.
    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("I/O error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn validation(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Validation {
            field: field.into(),
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

pub type Result<T> = std::result::Result<T, Error>;
