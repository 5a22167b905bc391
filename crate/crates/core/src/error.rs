use std::fmt;

/// Errors surfaced by the engine.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("lex error at offset {offset}: {message}")]
    Lex { offset: usize, message: String },
    #[error("syntax error at offset {offset}: expected {expected}, found {found}")]
    Syntax { offset: usize, expected: String, found: String },
    #[error("rejected query: {0}")]
    Rejected(String),
    #[error("name resolution failed: {0}")]
    Name(String),
    #[error("type error: {0}")]
    Type(String),
    #[error("ownership violation at `{node}`: {reason}")]
    Ownership { node: String, reason: String },
    #[error("bounds inference failed: {0}")]
    BoundsInference(String),
    #[error("evaluation error: {0}")]
    Eval(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
}

/// Coarse failure classes, used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ErrorCategory {
    Parse,
    Ownership,
    PrivacyParameter,
    Execution,
}

impl Error {
    pub fn parameter(msg: impl fmt::Display) -> Self {
        Error::Parameter(msg.to_string())
    }

    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::Lex { .. }
            | Error::Syntax { .. }
            | Error::Rejected(_)
            | Error::Name(_)
            | Error::Type(_)
            | Error::Unsupported(_) => ErrorCategory::Parse,
            Error::Ownership { .. } => ErrorCategory::Ownership,
            Error::Parameter(_) | Error::BoundsInference(_) => ErrorCategory::PrivacyParameter,
            Error::Eval(_) => ErrorCategory::Execution,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
