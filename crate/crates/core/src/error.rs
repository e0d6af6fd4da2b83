use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid config: {field}: {reason}")]
    Config { field: String, reason: String },

    #[error("length mismatch: {what} (expected {expected}, got {actual})")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("channel mismatch in {layer}: expected {expected}, got {actual}")]
    ChannelMismatch {
        layer: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("dense array of {elements} elements exceeds the cap of {cap}")]
    DenseTooLarge { elements: usize, cap: usize },

    #[error("point {0} was dropped during voxelization")]
    DroppedPoint(usize),

    #[error("step {step} exceeds total steps {total}")]
    StepOutOfRange { step: u64, total: u64 },

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("empty match set")]
    EmptyMatches,

    #[error("schema mismatch at parameter `{name}`: {reason}")]
    Schema { name: String, reason: String },

    #[error("tape mismatch: {0}")]
    Tape(String),

    #[error("degenerate scene: {0}")]
    Degenerate(String),

    #[error("non-finite loss at step {step}: {detail}")]
    NonFinite { step: u64, detail: String },

    #[error("malformed file {path}: {reason}")]
    Malformed { path: PathBuf, reason: String },

    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error on {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code: 2 for IO and format problems, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. }
            | Error::Json { .. }
            | Error::Malformed { .. }
            | Error::CorruptCheckpoint(_) => 2,
            _ => 1,
        }
    }
}
