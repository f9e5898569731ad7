//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{context}: shape mismatch, expected {expected}, got {got}")]
    ShapeMismatch {
        context: &'static str,
        expected: String,
        got: String,
    },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unknown prompt: {0:?}")]
    UnknownPrompt(String),

    #[error("insufficient coverage: {covered} pixels above threshold, need at least {needed}")]
    InsufficientCoverage { covered: usize, needed: usize },

    #[error("rank-deficient normal matrix in lighting fit (ridge = 0)")]
    RankDeficient,

    #[error("lighting frame mismatch: expected {expected}, got {got}")]
    FrameMismatch { expected: String, got: String },

    #[error("identity embedding is zero before normalization")]
    ZeroEmbedding,

    #[error("degenerate objective: {0}")]
    DegenerateObjective(String),

    #[error("non-finite loss in term {term:?} at iteration {iteration}")]
    NonFiniteLoss { term: String, iteration: usize },

    #[error("objective spec violation in {field}: {message}")]
    SpecViolation { field: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
