use std::path::PathBuf;

/// Errors produced by the toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("failed to load {path}: {source}")]
    Load {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: u64, message: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("unknown split `{0}`")]
    UnknownSplit(String),

    #[error("unknown label `{0}`")]
    UnknownLabel(String),

    #[error("index out of range: {0}")]
    OutOfRange(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("label vocabulary mismatch: {0}")]
    LabelMismatch(String),

    #[error("training aborted: {0}")]
    Training(String),

    #[error("undefined value: {0}")]
    Undefined(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("tensor error: {0}")]
    Tensor(#[from] candle_core::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Short machine-readable category.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Load { .. } => "load",
            Error::Io(_) => "io",
            Error::Validation(_) => "validation",
            Error::Parse { .. } => "parse",
            Error::Config(_) => "config",
            Error::UnknownSplit(_) => "unknown_split",
            Error::UnknownLabel(_) => "unknown_label",
            Error::OutOfRange(_) => "out_of_range",
            Error::Empty(_) => "empty",
            Error::LabelMismatch(_) => "label_mismatch",
            Error::Training(_) => "training",
            Error::Undefined(_) => "undefined",
            Error::Checkpoint(_) => "checkpoint",
            Error::Tensor(_) => "tensor",
            Error::Json(_) => "json",
            Error::Csv(_) => "csv",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
