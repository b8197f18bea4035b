use thiserror::Error;

/// Errors surfaced by the engine's core operations.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid {entity} `{id}`: {reason}")]
    InvalidRecord {
        entity: &'static str,
        id: String,
        reason: String,
    },

    #[error("duplicate {entity} id `{id}`")]
    DuplicateId { entity: &'static str, id: String },

    #[error("unknown {entity} id `{id}`")]
    UnknownId { entity: &'static str, id: String },

    #[error("article body is empty after removing embedded tweet text")]
    DegenerateArticle,

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("snapshots share no creator ids")]
    EmptySnapshotIntersection,

    #[error("split ratios must be positive")]
    InvalidRatios,

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("token id {id} out of range for vocabulary of size {vocab_size}")]
    TokenIdOutOfRange { id: u32, vocab_size: usize },

    #[error("cannot compute cosine similarity of a zero vector")]
    ZeroNorm,

    #[error("weight must lie in [0, 1], got {0}")]
    WeightOutOfRange(f64),

    #[error("vocabulary has no unknown token entry")]
    MissingUnknownToken,

    #[error("non-finite {0} aborted the training step")]
    NonFinite(String),

    #[error("run query sets differ: {0}")]
    QuerySetMismatch(String),

    #[error("invalid {0} file at line {1}: {2}")]
    MalformedLine(&'static str, usize, String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
