use std::path::PathBuf;
use std::process::ExitCode;

use thiserror::Error;

pub type Result<T, E = CliError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("I/O error at {path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("numerical failure in stage `{stage}`: {source}")]
    Numerical {
        stage: &'static str,
        #[source]
        source: mocomp::Error,
    },
    #[error("numerical check failed: {0}")]
    Check(String),
}

impl CliError {
    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(self.code())
    }

    /// 2 config, 3 I/O, 4 numerical.
    pub fn code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io { .. } => 3,
            CliError::Numerical { .. } | CliError::Check(_) => 4,
        }
    }

    pub fn io(path: impl Into<PathBuf>, err: impl std::fmt::Display) -> Self {
        CliError::Io { path: path.into(), message: err.to_string() }
    }
}

/// Attaches a stage name to core errors: argument errors become config errors,
/// container errors I/O errors, the rest numerical failures.
pub trait StageExt<T> {
    fn stage(self, stage: &'static str) -> Result<T>;
}

impl<T> StageExt<T> for mocomp::Result<T> {
    fn stage(self, stage: &'static str) -> Result<T> {
        self.map_err(|e| match e {
            mocomp::Error::InvalidArgument(_)
            | mocomp::Error::InvalidGrid(_)
            | mocomp::Error::UnknownPhantom(_)
            | mocomp::Error::TrajectoryOutOfRange { .. } => CliError::Config(format!("{stage}: {e}")),
            mocomp::Error::Container(c) => CliError::Io { path: PathBuf::from(stage), message: c.to_string() },
            source => CliError::Numerical { stage, source },
        })
    }
}
