use std::path::{Path, PathBuf};

/// Failures of the file-facing layer, grouped by the exit code they map to.
#[derive(Debug, thiserror::Error)]
pub enum AppError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, AppError>;

impl AppError {
    pub fn exit_code(&self) -> i32 {
        match self {
            AppError::Config(_) => 2,
            AppError::Data(_) | AppError::Io { .. } => 3,
            AppError::Numerical(_) => 4,
        }
    }

    pub fn io(path: &Path, source: std::io::Error) -> Self {
        AppError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    /// Classify a core error raised while handling data.
    pub fn data(e: relrot_core::Error) -> Self {
        use relrot_core::Error as E;
        match e {
            E::NonFiniteLoss { .. } => AppError::Numerical(e.to_string()),
            E::InvalidArgument(_) | E::ConflictingMethod(_) | E::Incompatible(_) => AppError::Config(e.to_string()),
            _ => AppError::Data(e.to_string()),
        }
    }

    /// Classify a core error raised while validating configuration.
    pub fn config(e: relrot_core::Error) -> Self {
        AppError::Config(e.to_string())
    }
}
