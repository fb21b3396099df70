use thiserror::Error;

/// Process exit status for a successful command.
pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("{0}")]
    Data(String),

    /// A check or run that completed but did not meet its numerical bar.
    #[error("{0}")]
    Failed(String),

    #[error(transparent)]
    Core(#[from] ainet::Error),
}

pub type CliResult<T> = std::result::Result<T, CliError>;

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Data(_) => EXIT_DATA,
            CliError::Failed(_) => EXIT_NUMERICAL,
            CliError::Core(e) if e.is_data_error() => EXIT_DATA,
            CliError::Core(e) if e.is_numerical_error() => EXIT_NUMERICAL,
            CliError::Core(_) => EXIT_USAGE,
        }
    }
}

pub(crate) fn io_error(path: &std::path::Path, source: std::io::Error) -> CliError {
    CliError::Core(ainet::Error::Io {
        path: path.to_path_buf(),
        source,
    })
}
