//! CLI error taxonomy mapped onto the stable exit-status contract:
//! 0 success, 1 runtime failure, 2 usage or schema error.

use std::fmt;

#[derive(Debug)]
pub enum CliError {
    /// Bad flags, unreadable/invalid config schema: exit status 2.
    Usage(String),
    /// Valid request that failed while running: exit status 1.
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "error: {m}"),
            CliError::Runtime(m) => write!(f, "error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<speechtraits_core::Error> for CliError {
    fn from(e: speechtraits_core::Error) -> Self {
        match e {
            // Configuration problems are schema errors by contract.
            speechtraits_core::Error::InvalidConfig { .. } => CliError::Usage(e.to_string()),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// Attach the path to filesystem errors.
pub fn io_err(path: &std::path::Path, e: std::io::Error) -> CliError {
    CliError::Runtime(format!("{}: {e}", path.display()))
}
