//! Command implementations behind the `mtfer` binary. Every command
//! returns a [`CliError`] carrying the process exit code on failure:
//! 2 for configuration or usage problems, 3 for missing or unreadable
//! input, 4 for checkpoint problems.

pub mod commands;
pub mod config;
pub mod plot;

use std::fmt;

use mtfer_core::Error;

pub const EXIT_USAGE: u8 = 2;
pub const EXIT_INPUT: u8 = 3;
pub const EXIT_CHECKPOINT: u8 = 4;

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        CliError { code: EXIT_USAGE, message: message.into() }
    }

    pub fn input(message: impl Into<String>) -> Self {
        CliError { code: EXIT_INPUT, message: message.into() }
    }

    /// Any failure while reading or matching a checkpoint.
    pub fn checkpoint(e: Error) -> Self {
        let code = match e {
            Error::Io { .. } => EXIT_INPUT,
            _ => EXIT_CHECKPOINT,
        };
        CliError { code, message: e.to_string() }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Config(_) | Error::Usage(_) | Error::Range(_) => EXIT_USAGE,
            Error::Corruption(_) | Error::Version(_) | Error::ConfigMismatch(_) => EXIT_CHECKPOINT,
            Error::Io { .. }
            | Error::Ingestion(_)
            | Error::Format(_)
            | Error::Row { .. }
            | Error::Label(_)
            | Error::Landmark(_)
            | Error::Size(_) => EXIT_INPUT,
            Error::Dimension(_) | Error::Numeric(_) => 1,
        };
        CliError { code, message: e.to_string() }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
