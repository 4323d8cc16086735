use std::path::PathBuf;

use thiserror::Error;

pub type CliResult<T> = std::result::Result<T, CliError>;

/// Failure categories; each maps to its own exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Config(String),
    #[error("fingerprint mismatch for `{name}`: run recorded {recorded}, dataset now hashes to {current}")]
    Fingerprint {
        name: String,
        recorded: String,
        current: String,
    },
    #[error("{0}")]
    CheckFailed(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Core(#[from] protokg::Error),
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn category(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Config(_) => "config",
            CliError::Fingerprint { .. } => "fingerprint",
            CliError::CheckFailed(_) => "check",
            CliError::Io { .. } => "io",
            CliError::Core(e) => match e {
                protokg::Error::Config(_) => "config",
                protokg::Error::Diverged { .. } | protokg::Error::NonFinite(_) => "training",
                protokg::Error::Io { .. }
                | protokg::Error::Parse { .. }
                | protokg::Error::UnknownLabel { .. }
                | protokg::Error::InvalidId { .. }
                | protokg::Error::EmptyInput(_) => "data",
                _ => "internal",
            },
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self.category() {
            "usage" => 2,
            "config" => 3,
            "data" => 4,
            "fingerprint" => 5,
            "training" => 6,
            "check" => 7,
            "io" => 8,
            _ => 1,
        }
    }
}
