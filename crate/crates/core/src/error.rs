use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the linking pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("duplicate id {0}")]
    DuplicateId(u64),

    #[error("mention {mention_id}: span [{start}, {end}) out of bounds for text of length {len}")]
    SpanOutOfBounds {
        mention_id: u64,
        start: usize,
        end: usize,
        len: usize,
    },

    #[error("mention {mention_id}: surface {surface:?} does not match text {found:?}")]
    SurfaceMismatch {
        mention_id: u64,
        surface: String,
        found: String,
    },

    #[error("mention {mention_id}: unknown gold id {gold_id}")]
    UnknownGoldId { mention_id: u64, gold_id: u64 },

    #[error("jaccard similarity is undefined for an empty string")]
    EmptyString,

    #[error("batch of size {0} has no in-batch negatives")]
    BatchTooSmall(usize),

    #[error("empty training set")]
    EmptyTrainingSet,

    #[error("vector format: {0}")]
    Format(String),

    #[error("missing vector for id {0}")]
    MissingId(u64),

    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("missing checkpoint for variant {0}")]
    MissingCheckpoint(String),

    #[error("stage {stage} failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },

    #[error("output directory {0} is locked by another pipeline")]
    Locked(PathBuf),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) trait IoContext<T> {
    fn io_context(self, context: impl FnOnce() -> String) -> Result<T>;
}

impl<T> IoContext<T> for std::io::Result<T> {
    fn io_context(self, context: impl FnOnce() -> String) -> Result<T> {
        self.map_err(|source| Error::Io {
            context: context(),
            source,
        })
    }
}
