//! Shared error type for the whole pipeline.

use thiserror::Error;

#[derive(Error, Debug)]
pub enum LatteError {
    #[error("degenerate embedding (zero norm){}", .0.as_ref().map(|s| format!(": {s}")).unwrap_or_default())]
    DegenerateEmbedding(Option<String>),

    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: String,
        expected: usize,
        got: usize,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("backend unavailable: {0}")]
    BackendUnavailable(String),

    #[error("caption generation failed after {attempts} attempts: {reason}")]
    GenerationFailed { attempts: u32, reason: String },

    #[error("missing caption for class {class}")]
    MissingCaption { class: String },

    #[error("class index {index} out of range (C = {num_classes})")]
    ClassIndexOutOfRange { index: usize, num_classes: usize },

    #[error("missing artifact `{artifact}`; run `{produced_by}` first")]
    MissingArtifact {
        artifact: String,
        produced_by: String,
    },

    #[error("format version mismatch in {file}: expected {expected}, found {found}")]
    FormatVersion {
        file: String,
        expected: u32,
        found: u32,
    },

    #[error("checkpoint/mode mismatch: {0}")]
    ModeMismatch(String),

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("run directory is locked by another process: {0}")]
    Locked(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, LatteError>;

impl LatteError {
    pub fn degenerate(context: impl Into<String>) -> Self {
        LatteError::DegenerateEmbedding(Some(context.into()))
    }
}
