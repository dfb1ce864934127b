use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Flags that parse but make no sense together.
    #[error("usage: {0}")]
    Usage(String),

    #[error(transparent)]
    Data(#[from] shapecode::Error),

    #[error("{0}")]
    Other(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) | CliError::Other(_) => 2,
        }
    }
}

pub fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}
