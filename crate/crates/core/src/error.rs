use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the crate.
#[derive(Debug, Error)]
pub enum Error {
    /// A caller broke an operation's precondition (shapes, ranges, state).
    #[error("contract violation: {0}")]
    Contract(String),

    /// A file did not match its declared layout.
    #[error("format error: {0}")]
    Format(String),

    #[error("i/o error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("config error: {0}")]
    Config(String),

    /// A loss or finite-difference probe produced NaN/inf.
    #[error("non-finite value at {context}")]
    NonFinite { context: String },

    /// Checkpoint or data does not fit the requested configuration.
    #[error("incompatible: {0}")]
    Incompatible(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}

macro_rules! contract {
    ($cond:expr, $($arg:tt)+) => {
        if !$cond {
            return Err($crate::Error::Contract(format!($($arg)+)));
        }
    };
}
pub(crate) use contract;
