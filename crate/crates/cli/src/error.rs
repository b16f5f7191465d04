use std::process::ExitCode;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),

    #[error("config: {0}")]
    Config(String),

    /// Some subjects failed; the rest of the command completed.
    #[error("{} subject(s) failed: {}", .0.len(), .0.iter().map(|(id, e)| format!("{id}: {e}")).collect::<Vec<_>>().join("; "))]
    Partial(Vec<(String, String)>),

    #[error("{0}")]
    Fatal(String),
}

impl CliError {
    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(self.code())
    }

    pub fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::Config(_) => 1,
            CliError::Partial(_) => 2,
            CliError::Fatal(_) => 3,
        }
    }
}

impl From<bodyatlas::Error> for CliError {
    fn from(e: bodyatlas::Error) -> Self {
        CliError::Fatal(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Fatal(e.to_string())
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
