use alloc::string::String;
use core::fmt;

/// Failure categories shared by every module of the crate.
///
/// The CLI maps [`Error::Config`] and [`Error::Usage`] to exit code 2 and
/// [`Error::Numeric`] to exit code 3.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Invalid configuration or mismatched dimensions.
    Config(String),
    /// A non-finite value or an invariant on a numeric quantity was violated.
    Numeric(String),
    /// The computation graph is malformed.
    Structural(String),
    /// An API was called in a state where it is not allowed.
    Usage(String),
    /// Internal bookkeeping went out of sync.
    Internal(String),
}

pub type Result<T> = core::result::Result<T, Error>;

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }

    pub fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }

    pub fn internal(msg: impl Into<String>) -> Self {
        Error::Internal(msg.into())
    }

    /// Same category, message prefixed with `ctx`.
    pub fn context(self, ctx: &str) -> Self {
        let wrap = |m: String| alloc::format!("{ctx}: {m}");
        match self {
            Error::Config(m) => Error::Config(wrap(m)),
            Error::Numeric(m) => Error::Numeric(wrap(m)),
            Error::Structural(m) => Error::Structural(wrap(m)),
            Error::Usage(m) => Error::Usage(wrap(m)),
            Error::Internal(m) => Error::Internal(wrap(m)),
        }
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Config(m) => write!(f, "configuration error: {m}"),
            Error::Numeric(m) => write!(f, "numeric error: {m}"),
            Error::Structural(m) => write!(f, "structural error: {m}"),
            Error::Usage(m) => write!(f, "usage error: {m}"),
            Error::Internal(m) => write!(f, "internal error: {m}"),
        }
    }
}

impl core::error::Error for Error {}
