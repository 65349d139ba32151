use std::path::PathBuf;

use thiserror::Error;

/// Process exit codes.
pub mod exit {
    pub const USAGE: i32 = 1;
    pub const UNWRITABLE: i32 = 2;
    pub const DIMENSION_MISMATCH: i32 = 3;
    pub const MISSING_ARTIFACTS: i32 = 4;
    pub const DIVERGED: i32 = 5;
    pub const MIXED_CONFIG: i32 = 6;
    pub const OTHER: i32 = 7;
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),

    #[error("cannot write {}: {source}", path.display())]
    Unwritable {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error("checkpoint {} does not match the config: {detail}", path.display())]
    DimensionMismatch { path: PathBuf, detail: String },

    #[error("missing artifacts: {}", .0.join(", "))]
    MissingArtifacts(Vec<String>),

    #[error("training diverged in {} cell(s): {}", .0.len(), .0.join(", "))]
    Diverged(Vec<String>),

    #[error("{} was produced by config {found}, expected {expected}", path.display())]
    MixedConfig {
        path: PathBuf,
        found: String,
        expected: String,
    },

    #[error("invalid artifact {}: {detail}", path.display())]
    BadArtifact { path: PathBuf, detail: String },

    #[error(transparent)]
    Core(#[from] redcmp::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => exit::USAGE,
            CliError::Unwritable { .. } => exit::UNWRITABLE,
            CliError::DimensionMismatch { .. } => exit::DIMENSION_MISMATCH,
            CliError::MissingArtifacts(_) => exit::MISSING_ARTIFACTS,
            CliError::Diverged(_) => exit::DIVERGED,
            CliError::MixedConfig { .. } => exit::MIXED_CONFIG,
            CliError::BadArtifact { .. } | CliError::Core(_) => exit::OTHER,
        }
    }

    pub fn bad(path: impl Into<PathBuf>, detail: impl Into<String>) -> Self {
        CliError::BadArtifact {
            path: path.into(),
            detail: detail.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
