use std::path::PathBuf;

use thiserror::Error;

/// Failure of a CLI command, grouped by exit status.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl CliError {
    /// 1 config, 2 data, 3 numerical. Output-file I/O counts as a data error.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Data(_) | CliError::Io { .. } => 2,
            CliError::Numerical(_) => 3,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    /// Library error raised while running `context`.
    pub(crate) fn from_core(context: &str, e: capclass::Error) -> Self {
        use capclass::Error as E;
        let msg = format!("{context}: {e}");
        match e {
            E::NonConvergence { .. } | E::Infeasible(_) => CliError::Numerical(msg),
            E::InvalidParameter(_) | E::InvalidCapacity(_) | E::InvalidPlan { .. } => CliError::Config(msg),
            _ => CliError::Data(msg),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
