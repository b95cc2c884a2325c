use std::fmt;
use std::process::ExitCode;

use bathy_core::Error;

/// Failure of one subcommand, classified by exit code.
#[derive(Debug)]
pub enum CliError {
    /// Bad configuration, arguments or input files (exit 1).
    Invalid(String),
    /// The computation itself failed, e.g. no overlap or no convergence (exit 2).
    Runtime(String),
    /// The gradient check found a mismatch (exit 3).
    GradCheck(String),
}

impl CliError {
    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(match self {
            CliError::Invalid(_) => 1,
            CliError::Runtime(_) => 2,
            CliError::GradCheck(_) => 3,
        })
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Invalid(m) => write!(f, "invalid input: {m}"),
            CliError::Runtime(m) => write!(f, "runtime failure: {m}"),
            CliError::GradCheck(m) => write!(f, "gradient check failed: {m}"),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidInput(_)
            | Error::InvalidShape { .. }
            | Error::Parse { .. }
            | Error::Io { .. } => CliError::Invalid(e.to_string()),
            Error::DegenerateGeometry(_) | Error::NoOverlap(_) | Error::Shortfall { .. } => {
                CliError::Runtime(e.to_string())
            }
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
