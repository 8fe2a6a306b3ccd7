use std::path::PathBuf;
use std::process::ExitCode;

use thiserror::Error;

/// Failures surfaced by a command, each mapped to an exit code.
#[derive(Debug, Error)]
pub enum CliError {
    /// Unreadable or invalid input; exit 1.
    #[error("config error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Model(#[from] ccmqd::Error),
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io { path: path.into(), source }
    }
}

/// Successful command completion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Success,
    /// Some seeds, cells or checks failed; exit 2.
    Partial,
}

impl Outcome {
    pub fn exit_code(self) -> u8 {
        match self {
            Outcome::Success => 0,
            Outcome::Partial => 2,
        }
    }
}

/// Exit code of a finished command.
pub fn exit_code(result: &Result<Outcome, CliError>) -> ExitCode {
    match result {
        Ok(o) => ExitCode::from(o.exit_code()),
        Err(_) => ExitCode::from(1),
    }
}
