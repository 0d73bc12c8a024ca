use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("variable does not belong to this tape")]
    NotOnTape,
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error("empty batch")]
    EmptyBatch,
    #[error("non-finite loss at batch {batch}")]
    NonFiniteLoss { batch: usize },
    #[error("critic diverged at batch {batch}: loss {loss:e}")]
    CriticDiverged { batch: usize, loss: f64 },
    #[error("expected a stage {expected} checkpoint, found stage {found}")]
    StageMismatch { expected: String, found: String },
    #[error("unsupported checkpoint version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("checkpoint is missing array `{0}`")]
    MissingArray(String),
    #[error("malformed json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("malformed config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short stable identifier used in the CLI's machine-readable errors.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Shape(_) => "shape",
            Error::NonFinite(_) => "non_finite",
            Error::Degenerate(_) => "degenerate",
            Error::NotOnTape => "not_on_tape",
            Error::Invalid(_) => "invalid_argument",
            Error::EmptyBatch => "empty_batch",
            Error::NonFiniteLoss { .. } => "non_finite_loss",
            Error::CriticDiverged { .. } => "critic_diverged",
            Error::StageMismatch { .. } => "stage_mismatch",
            Error::Version { .. } => "version",
            Error::MissingArray(_) => "missing_array",
            Error::Json(_) => "json",
            Error::Config(_) => "config",
            Error::Io { .. } => "io",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
