use std::io;

use thiserror::Error;

/// Errors raised anywhere in the toolkit.
///
/// The variants are grouped by failure class so that front ends can map
/// them onto stable exit codes (see [`Error::class`]).
#[derive(Debug, Error)]
pub enum Error {
    #[error("{what} out of range: {detail}")]
    Bounds { what: &'static str, detail: String },

    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: [usize; 2],
        right: [usize; 2],
    },

    #[error("data error: {0}")]
    Data(String),

    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: u64, message: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("state error: {0}")]
    State(String),

    #[error("non-finite value in {tensor}: {detail}")]
    NonFinite { tensor: String, detail: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
}

/// Coarse failure class used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Data,
    Numeric,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Config(_) | Error::Bounds { .. } => ErrorClass::Config,
            Error::NonFinite { .. } => ErrorClass::Numeric,
            Error::Shape { .. }
            | Error::Data(_)
            | Error::Parse { .. }
            | Error::State(_)
            | Error::Io { .. } => ErrorClass::Data,
        }
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
