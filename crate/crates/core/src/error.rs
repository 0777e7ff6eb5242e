use std::path::PathBuf;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("image file not found: {0}")]
    MissingFile(PathBuf),

    #[error("failed to decode image {path}: {reason}")]
    Decode { path: PathBuf, reason: String },

    #[error("failed to write {path}: {reason}")]
    Write { path: PathBuf, reason: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimMismatch { expected: String, actual: String },

    #[error("degenerate control-point configuration: {0}")]
    DegenerateConfiguration(String),

    #[error("invalid configuration:\n{}", format_fields(.0))]
    InvalidConfig(Vec<FieldError>),

    #[error("bundle mode mismatch: operation requires the {required} mode, bundle is {actual}")]
    ModeMismatch { required: String, actual: String },

    #[error("non-finite loss at iteration {iteration}: {snapshot}")]
    NonFiniteLoss { iteration: usize, snapshot: String },

    #[error("checkpoint error at {path}: {reason}")]
    Checkpoint { path: PathBuf, reason: String },

    #[error(
        "pretrained weights unavailable: {0}. Point $AUGURONE_WEIGHTS_DIR (or the config's weights path) \
         at a directory containing the safetensors file, or use the pixel/raw-patch fallback mode"
    )]
    MissingWeights(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub const WEIGHTS_ENV: &str = "AUGURONE_WEIGHTS_DIR";

/// One failed validation rule, named by its config field path.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FieldError {
    pub field: String,
    pub message: String,
}

impl FieldError {
    pub fn new(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            field: field.into(),
            message: message.into(),
        }
    }
}

impl std::fmt::Display for FieldError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

fn format_fields(fields: &[FieldError]) -> String {
    fields
        .iter()
        .map(|e| format!("  - {e}"))
        .collect::<Vec<_>>()
        .join("\n")
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
