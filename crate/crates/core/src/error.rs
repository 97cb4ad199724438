use std::path::PathBuf;

/// Errors raised across the crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A caller broke a documented precondition (shape, range, emptiness).
    #[error("contract violation: {0}")]
    Contract(String),

    /// A file could not be decoded.
    #[error("parse error in {file} at byte offset {offset}: {msg}")]
    Parse {
        file: String,
        offset: u64,
        msg: String,
    },

    /// A file decoded but its contents disagree with the declared schema.
    #[error("schema error: {0}")]
    Schema(String),

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Training produced a NaN or infinite loss or parameter.
    #[error("non-finite value encountered at step {step}")]
    NonFinite { step: usize },

    #[error("invalid configuration: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

macro_rules! ensure {
    ($cond:expr, $($arg:tt)+) => {
        if !$cond {
            return Err($crate::error::Error::Contract(format!($($arg)+)));
        }
    };
}
pub(crate) use ensure;
