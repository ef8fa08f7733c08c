use eptikit_core::Error as CoreError;
use thiserror::Error;

/// Failures of a command, mapped to the process exit status.
#[derive(Debug, Error)]
pub enum CliError {
    /// Bad config, flags or inputs (exit 2).
    #[error("{0}")]
    Config(String),
    /// Solver or numerical failure (exit 3).
    #[error("{0}")]
    Numerical(String),
    /// Output could not be written (exit 1).
    #[error("i/o: {0}")]
    Io(String),
}

impl CliError {
    pub fn config(msg: impl Into<String>) -> Self {
        CliError::Config(msg.into())
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::Io(_) => 1,
        }
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::Numerical(_) => CliError::Numerical(e.to_string()),
            // Unreadable or malformed input containers count as bad input.
            CoreError::Invalid(_) | CoreError::Dimension(_) | CoreError::Container(_) => CliError::Config(e.to_string()),
        }
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn core_errors_map_to_exit_codes() {
        let code = |e: CoreError| CliError::from(e).exit_code();
        assert_eq!(code(CoreError::Numerical("nan".into())), 3);
        assert_eq!(code(CoreError::Invalid("x".into())), 2);
        assert_eq!(code(CoreError::Dimension("x".into())), 2);
        assert_eq!(code(eptikit_core::ContainerError::BadMagic.into()), 2);
        assert_eq!(CliError::from(std::io::Error::other("disk full")).exit_code(), 1);
    }
}
