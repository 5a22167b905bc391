use std::path::PathBuf;

use dpquery_core::{Error as EngineError, ErrorCategory};

/// Process exit codes. Every failure maps to exactly one of these.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitCode {
    Success = 0,
    /// `test-dp` found a pair of databases violating the DP predicate.
    DpViolation = 1,
    Usage = 2,
    Io = 3,
    Parse = 4,
    Ownership = 5,
    PrivacyParameter = 6,
    Execution = 7,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Ingest { path: PathBuf, message: String },
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error("writing output: {0}")]
    Output(String),
}

impl CliError {
    pub fn exit_code(&self) -> ExitCode {
        match self {
            CliError::Usage(_) => ExitCode::Usage,
            CliError::Io { .. } | CliError::Ingest { .. } | CliError::Output(_) => ExitCode::Io,
            CliError::Engine(e) => match e.category() {
                ErrorCategory::Parse => ExitCode::Parse,
                ErrorCategory::Ownership => ExitCode::Ownership,
                ErrorCategory::PrivacyParameter => ExitCode::PrivacyParameter,
                ErrorCategory::Execution => ExitCode::Execution,
            },
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io { path: path.into(), source }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Output(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Output(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Output(e.to_string())
    }
}
