use std::fmt;
use std::io;

/// Failure of a subcommand, carrying its process exit code.
#[derive(Debug)]
pub enum CliError {
    /// Bad flags or flag combinations. Exit code 1.
    Usage(String),
    /// Unreadable or malformed input, or input the analysis cannot use. Exit code 2.
    Data(String),
    /// Computation exceeds a configured budget. Exit code 3.
    Resource(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Resource(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Data(m) => write!(f, "data error: {m}"),
            CliError::Resource(m) => write!(f, "resource error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<coordination::Error> for CliError {
    fn from(e: coordination::Error) -> Self {
        use coordination::Error;
        match e {
            Error::Config(m) => CliError::Usage(m),
            Error::Resource(m) => CliError::Resource(m),
            Error::Domain(m) | Error::Ineligible(m) => CliError::Data(m),
        }
    }
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;
