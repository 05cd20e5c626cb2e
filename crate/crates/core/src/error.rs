use std::path::PathBuf;

use thiserror::Error;

use crate::harness::checkpoint::Checkpoint;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("degenerate attention mask: query row {row} has no allowed key")]
    DegenerateMask { row: usize },

    #[error("token id {id} out of range for vocabulary of size {vocab}")]
    TokenOutOfRange { id: u32, vocab: usize },

    #[error("non-finite gradient in parameter `{param}` at position {index}")]
    NonFiniteGradient { param: String, index: usize },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("task {task} requires field `{field}`")]
    MissingField { field: &'static str, task: String },

    #[error("missing prior checkpoint: stage {stage} needs a stage {} checkpoint", stage - 1)]
    MissingCheckpoint { stage: u8 },

    #[error("loss diverged at step {step}")]
    Divergence { step: usize, last_good: Box<Checkpoint> },

    #[error("bad magic: expected {expected:?}")]
    BadMagic { expected: &'static str },

    #[error("unsupported format version {0}")]
    UnsupportedVersion(u16),

    #[error("truncated payload: expected {expected} bytes, found {found}")]
    TruncatedPayload { expected: usize, found: usize },

    #[error("manifest references missing file {0}")]
    DanglingPath(PathBuf),

    #[error("duplicate manifest id `{0}`")]
    DuplicateId(String),

    #[error("config hash mismatch: checkpoint has {found}, current config is {expected} (use --force to override)")]
    ConfigMismatch { expected: String, found: String },

    #[error("model not loaded: {0}")]
    NotLoaded(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape { op, detail: detail.into() }
    }

    /// Errors caused by bad user input rather than a failure while running.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::InvalidArgument(_)
                | Error::MissingField { .. }
                | Error::MissingCheckpoint { .. }
                | Error::ConfigMismatch { .. }
                | Error::DanglingPath(_)
                | Error::DuplicateId(_)
                | Error::NotLoaded(_)
        )
    }
}
