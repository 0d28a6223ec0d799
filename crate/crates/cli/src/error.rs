use std::io::ErrorKind;

use sparse_occ::Error;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] Error),
    #[error("{0}")]
    Usage(String),
    #[error("writing output: {0}")]
    Output(String),
}

impl CliError {
    /// 1 config or usage, 2 not found, 3 parse, 4 dimension mismatch.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(Error::Io { source, .. }) if source.kind() == ErrorKind::NotFound => 2,
            CliError::Core(Error::Parse { .. } | Error::NotNormalized { .. }) => 3,
            CliError::Core(Error::DimMismatch(_)) => 4,
            _ => 1,
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

pub fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}
