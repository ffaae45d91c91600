use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] structnode::Error),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(path: impl Into<PathBuf>, message: impl ToString) -> Self {
        CliError::Format {
            path: path.into(),
            message: message.to_string(),
        }
    }

    /// 2 config or schema, 3 I/O, 4 precondition, 5 non-finite numerics, 1 other.
    pub fn exit_code(&self) -> i32 {
        use structnode::Error as E;
        match self {
            CliError::Io { .. } => 3,
            CliError::Format { .. } => 2,
            CliError::Core(e) => match e {
                E::Config(_) | E::Dimension { .. } => 2,
                E::Precondition(_) => 4,
                E::NonFiniteLoss { .. } | E::NonFiniteGradient { .. } | E::Integration { .. } | E::FilterDivergence(_) => 5,
                _ => 1,
            },
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
