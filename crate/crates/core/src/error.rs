use alloc::string::String;

/// Errors raised by the numerical core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// A caller-supplied shape, hyperparameter or configuration is invalid.
    #[error("configuration error: {0}")]
    Config(String),
    /// An internal consistency check failed (saved context mismatch,
    /// architecture bug, missing gradient).
    #[error("internal error: {0}")]
    Internal(String),
    /// The operation cannot run on this input (e.g. empty boundary set).
    #[error("{0}")]
    Domain(String),
}

pub type Result<T, E = Error> = core::result::Result<T, E>;

macro_rules! config_err {
    ($($arg:tt)*) => {
        $crate::error::Error::Config(alloc::format!($($arg)*))
    };
}

macro_rules! internal_err {
    ($($arg:tt)*) => {
        $crate::error::Error::Internal(alloc::format!($($arg)*))
    };
}

pub(crate) use config_err;
pub(crate) use internal_err;
