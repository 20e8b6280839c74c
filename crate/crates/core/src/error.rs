use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A loss, gradient or parameter left the finite range.
    #[error("numeric failure in {context}: {detail}")]
    NumericFailure { context: String, detail: String },

    /// Parse or validation failure while reading one of the text formats.
    /// `line` is 1-based; 0 means the problem concerns the file as a whole.
    #[error("{}:{line}: {message}", path.display())]
    Load {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("checkpoint integrity check failed: {0}")]
    Integrity(String),

    #[error("io error on {}: {source}", path.display())]
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

    pub(crate) fn numeric(context: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::NumericFailure {
            context: context.into(),
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Prefix the context of a numeric failure, e.g. with round and client.
    pub fn with_context(self, outer: impl std::fmt::Display) -> Self {
        match self {
            Error::NumericFailure { context, detail } => Error::NumericFailure {
                context: format!("{outer}: {context}"),
                detail,
            },
            other => other,
        }
    }
}
