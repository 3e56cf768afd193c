//! Exit-code policy: 0 success, 2 config, 3 IO, 4 missing input,
//! 5 training failure, 6 shape mismatch. Anything else is a plain 1.

use sfml_core::Error as CoreError;
use std::fmt;

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Io(String),
    MissingInput(String),
    Training(String),
    Shape(String),
    Other(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io(_) => 3,
            CliError::MissingInput(_) => 4,
            CliError::Training(_) => 5,
            CliError::Shape(_) => 6,
            CliError::Other(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Io(m) => write!(f, "io error: {m}"),
            CliError::MissingInput(m) => write!(f, "missing input: {m}"),
            CliError::Training(m) => write!(f, "training failure: {m}"),
            CliError::Shape(m) => write!(f, "shape mismatch: {m}"),
            CliError::Other(m) => write!(f, "{m}"),
        }
    }
}

impl std::error::Error for CliError {}

/// Default mapping from core errors outside any more specific context.
impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::Io(err) => CliError::Io(err.to_string()),
            CoreError::TrainingDiverged { .. } => CliError::Training(e.to_string()),
            CoreError::DimensionMismatch { .. } => CliError::Shape(e.to_string()),
            CoreError::UnknownSpec(_) => CliError::Config(e.to_string()),
            CoreError::InvalidArgument(_) => CliError::Config(e.to_string()),
            other => CliError::Other(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
