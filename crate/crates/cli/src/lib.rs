//! Experiment commands behind the `fsner` binary.

pub mod commands;
pub mod config;

use std::fmt;

use fsner::Error;

/// Process exit status classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitKind {
    Config = 2,
    Data = 3,
    Divergence = 4,
}

#[derive(Debug)]
pub struct CliError {
    pub kind: ExitKind,
    pub message: String,
}

impl CliError {
    pub fn config(message: impl Into<String>) -> Self {
        CliError { kind: ExitKind::Config, message: message.into() }
    }

    pub fn data(message: impl Into<String>) -> Self {
        CliError { kind: ExitKind::Data, message: message.into() }
    }

    pub fn exit_code(&self) -> i32 {
        self.kind as i32
    }

    /// Prefixes the message with where the error came from.
    pub fn context(mut self, what: impl fmt::Display) -> Self {
        self.message = format!("{what}: {}", self.message);
        self
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
        let kind = match &e {
            Error::NonFiniteLoss => ExitKind::Divergence,
            Error::InvalidConfig(_)
            | Error::InvalidTemplate(_)
            | Error::MissingVerbalizerEntry(_)
            | Error::UnknownWord { .. }
            | Error::Unsupported(_)
            | Error::UnsupportedFormat(_)
            | Error::BadPattern { .. }
            | Error::DuplicatePriority { .. }
            | Error::DuplicateLabel(_)
            | Error::DimensionMismatch(_) => ExitKind::Config,
            _ => ExitKind::Data,
        };
        CliError { kind, message: e.to_string() }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::data(e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;
