use std::fmt;

use pldg::PldgError;

/// A command failure, split by exit code.
#[derive(Debug)]
pub enum CliError {
    /// Bad arguments or configuration (exit code 1).
    Usage(String),
    /// The command was well-formed but failed while running (exit code 2).
    Runtime(String),
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Runtime(m) => f.write_str(m),
        }
    }
}

impl From<PldgError> for CliError {
    fn from(e: PldgError) -> Self {
        match e {
            PldgError::Config(_) | PldgError::Argument(_) => CliError::Usage(e.to_string()),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

pub fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

pub fn runtime(msg: impl Into<String>) -> CliError {
    CliError::Runtime(msg.into())
}
