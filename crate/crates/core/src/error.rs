use std::path::PathBuf;

pub type Result<T, E = QcError> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum QcError {
    #[error("failed to load {path}: {reason}")]
    Load { path: PathBuf, reason: String },

    #[error("{path}: volume contains {count} non-finite voxel(s)")]
    NonFinite { path: PathBuf, count: usize },

    #[error("brain extent is empty: {0}")]
    EmptyExtent(String),

    #[error("slice extraction produced no slices: {0}")]
    EmptySelection(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("no input: {0}")]
    NoInput(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("training data has a single class ({0})")]
    SingleClass(String),

    #[error("training diverged: {0}")]
    Diverged(String),

    #[error("view mismatch: model expects {expected} slices, got {actual}")]
    ViewMismatch { expected: String, actual: String },

    #[error("digest mismatch: expected {expected}, found {actual}")]
    DigestMismatch { expected: String, actual: String },

    #[error("model format: {0}")]
    ModelFormat(String),

    #[error("degenerate data: {0}")]
    Degenerate(String),

    #[error("data leakage: {0}")]
    Leakage(String),

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("label file: {0}")]
    Labels(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl QcError {
    pub fn invalid(msg: impl Into<String>) -> Self {
        QcError::InvalidArgument(msg.into())
    }
}
