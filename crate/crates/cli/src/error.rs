use gmt_core::GmtError;
use thiserror::Error;

/// Process exit codes.
pub mod exit {
    pub const OK: i32 = 0;
    pub const USAGE: i32 = 2;
    pub const DATA: i32 = 3;
    pub const NUMERICAL: i32 = 4;
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] GmtError),
}

impl CliError {
    pub fn usage(msg: impl Into<String>) -> Self {
        CliError::Usage(msg.into())
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => exit::USAGE,
            CliError::Core(e) => match e {
                GmtError::ConfigMismatch(_)
                | GmtError::BadCount { .. }
                | GmtError::TooFewSamples { .. }
                | GmtError::InvalidInput(_) => exit::USAGE,
                GmtError::NonFiniteLoss { .. } => exit::NUMERICAL,
                _ => exit::DATA,
            },
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
