use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

/// Crate-wide result alias.
pub type Result<T> = core::result::Result<T, Error>;

/// Errors raised by the numerical and curation pipelines.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Incompatible tensor shapes for an operation.
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    /// A precondition on an argument was violated.
    InvalidArgument(String),
    /// A configuration field failed validation.
    InvalidConfig {
        field: &'static str,
        message: String,
    },
    /// A manifest row failed validation; `line` is 1-based.
    Manifest { line: usize, message: String },
    /// A gradient contained NaN or Inf; the optimizer step was rejected.
    NonFiniteGradient { param: String },
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::ShapeMismatch { op, lhs, rhs } => {
                write!(f, "{op}: incompatible shapes {lhs:?} and {rhs:?}")
            }
            Error::InvalidArgument(msg) => write!(f, "invalid argument: {msg}"),
            Error::InvalidConfig { field, message } => {
                write!(f, "invalid config field `{field}`: {message}")
            }
            Error::Manifest { line, message } => write!(f, "manifest line {line}: {message}"),
            Error::NonFiniteGradient { param } => {
                write!(f, "non-finite gradient for parameter `{param}`")
            }
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for Error {}
