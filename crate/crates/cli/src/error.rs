use std::path::PathBuf;

use seqagg::ErrorClass;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error("{}: {source}", path.display())]
    Json {
        path: PathBuf,
        source: serde_json::Error,
    },

    #[error("{}: {source}", path.display())]
    InFile { path: PathBuf, source: seqagg::Error },

    #[error(transparent)]
    Core(#[from] seqagg::Error),
}

impl CliError {
    /// 1 usage, 2 data or validation, 3 numerical.
    pub fn exit_code(&self) -> i32 {
        let class = match self {
            CliError::Usage(_) => ErrorClass::Usage,
            CliError::Io { .. } | CliError::Json { .. } => ErrorClass::Data,
            CliError::InFile { source, .. } | CliError::Core(source) => source.class(),
        };
        match class {
            ErrorClass::Usage => 1,
            ErrorClass::Data => 2,
            ErrorClass::Numerical => 3,
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
