use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] fdisc_core::Error),

    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },

    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },

    #[error("{path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("missing artifact {path}; run `fdisc {stage}` first")]
    MissingArtifact { path: PathBuf, stage: &'static str },

    #[error("stale artifact {path}: {reason}. Re-run `fdisc {stage}` to refresh it")]
    Stale { path: PathBuf, stage: &'static str, reason: String },

    #[error(
        "no pseudopoint labels at {path}. Run `fdisc pseudopoints export`, fill the score column of the exported CSV, \
         then run `fdisc pseudopoints import <csv>` (or use `--auto-label <truth.json>` on export)"
    )]
    MissingLabels { path: PathBuf },

    #[error("configuration error: {0}")]
    Config(String),
}

impl CliError {
    /// Process exit status: 1 for bad inputs or stale state, 2 for internal
    /// or numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(e) if !e.is_user_error() => 2,
            CliError::Io { source, .. } if source.kind() != std::io::ErrorKind::NotFound => 2,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
