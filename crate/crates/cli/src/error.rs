use std::fmt;
use std::path::Path;

use densecotrain::Error;

/// Process exit codes. Stable contract.
pub const EXIT_USAGE: u8 = 2;
pub const EXIT_IO: u8 = 3;
pub const EXIT_RUNTIME: u8 = 4;

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }

    pub fn io(path: &Path, e: impl fmt::Display) -> Self {
        CliError {
            code: EXIT_IO,
            message: format!("{}: {e}", path.display()),
        }
    }

    pub fn runtime(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_RUNTIME,
            message: message.into(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

/// Validation problems exit 2, file-system problems 3, the rest 4.
impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Io { .. } => EXIT_IO,
            Error::Csv(c) if c.is_io_error() => EXIT_IO,
            Error::InvalidBox { .. }
            | Error::InvalidParam { .. }
            | Error::Parse { .. }
            | Error::InsufficientRecords { .. }
            | Error::MissingGenes(_)
            | Error::Json(_)
            | Error::Csv(_) => EXIT_USAGE,
            Error::SingleClass(_)
            | Error::EmptyTraining(_)
            | Error::BadProbability { .. }
            | Error::Untrained(_)
            | Error::BadObjective { .. }
            | Error::ObjectiveFailed { .. } => EXIT_RUNTIME,
        };
        CliError {
            code,
            message: e.to_string(),
        }
    }
}
