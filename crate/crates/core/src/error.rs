use thiserror::Error;

/// Errors raised by the optimizer and its data loaders.
#[derive(Debug, Error)]
pub enum Error {
    #[error("key vector has length {keys} but the candidate pool has {pool} entries")]
    KeyPoolMismatch { keys: usize, pool: usize },

    #[error("cannot select {k} items from a pool of {pool}")]
    PoolTooSmall { k: usize, pool: usize },

    #[error("unknown item id `{0}`")]
    UnknownItem(String),

    #[error("invalid item `{item}`: {reason}")]
    InvalidItem { item: String, reason: String },

    #[error("invalid user context `{user}`: {reason}")]
    InvalidUser { user: String, reason: String },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("category counts sum to {sum}, expected {expected}")]
    GiniCountMismatch { sum: usize, expected: usize },

    #[error("generation {t} is outside the schedule range 0..={t_max}")]
    GenerationOutOfRange { t: usize, t_max: usize },

    #[error("population is empty")]
    EmptyPopulation,

    #[error("population of {0} is too small for DE/pbest/1 (need at least 4)")]
    PopulationTooSmall(usize),

    #[error("transfer size {k} must be smaller than both population sizes ({exploit}, {explore})")]
    TransferTooLarge {
        k: usize,
        exploit: usize,
        explore: usize,
    },

    #[error("line {line}: missing {field}")]
    MissingField { line: usize, field: &'static str },

    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },

    #[error("embedding dimension mismatch for `{item}`: expected {expected}, found {found}")]
    DimensionMismatch {
        item: String,
        expected: usize,
        found: usize,
    },

    #[error("embedding for `{0}` has zero norm")]
    ZeroEmbedding(String),

    #[error("missing embeddings for {} item(s): {}", .0.len(), .0.join(", "))]
    MissingEmbeddings(Vec<String>),

    #[error("invalid embedding file: {0}")]
    EmbeddingFormat(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
