use std::path::PathBuf;

use selfex_autodiff::AutodiffError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("action {action} for UE {ue} is outside 0..={max}")]
    InvalidAction { ue: usize, action: usize, max: usize },
    #[error("expected {expected} actions, got {actual}")]
    ActionCount { expected: usize, actual: usize },
    #[error("step called on a finished episode")]
    StepAfterDone,
    #[error("expected an input of length {expected}, got {actual}")]
    InputLength { expected: usize, actual: usize },
    #[error("empty batch")]
    EmptyBatch,
    #[error("unknown action id {action} (policy has {n_actions} actions)")]
    UnknownAction { action: usize, n_actions: usize },
    #[error("non-finite {what} at update {update}: {detail}")]
    NonFiniteLoss {
        what: String,
        update: usize,
        detail: String,
    },
    #[error("unsupported format version {found} (expected major {expected})")]
    VersionMismatch { found: String, expected: u32 },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("corrupt file {path}: {reason}")]
    Corrupt { path: PathBuf, reason: String },
    #[error("fingerprint mismatch: {0}")]
    FingerprintMismatch(String),
    #[error("environment fault in env {env}: {source}")]
    Environment {
        env: usize,
        #[source]
        source: Box<Error>,
    },
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
