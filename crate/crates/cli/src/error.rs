use std::fmt;

use seqdetect_core::Error as CoreError;

/// Failure of a CLI command, split by exit status.
#[derive(Debug, Clone, PartialEq)]
pub enum CliError {
    /// The configuration violates the schema or an invariant.
    Config(String),
    /// The study failed while running, or its outputs could not be written.
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Config(_) => 2,
            Self::Runtime(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Config(msg) => write!(f, "config error: {msg}"),
            Self::Runtime(msg) => write!(f, "runtime error: {msg}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::TrialFailed { .. }
            | CoreError::HorizonExceeded { .. }
            | CoreError::SampledInactiveStream { .. } => Self::Runtime(e.to_string()),
            _ => Self::Config(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::Runtime(e.to_string())
    }
}
