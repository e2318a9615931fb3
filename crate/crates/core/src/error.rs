use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("zero vector (norm below 1e-12)")]
    ZeroVector,

    #[error("empty list")]
    EmptyList,

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimMismatch { expected: usize, actual: usize },

    #[error("empty batch")]
    EmptyBatch,

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("non-finite value produced: {0}")]
    NonFinite(String),

    #[error("token id {id} out of range for vocabulary of size {vocab}")]
    TokenOutOfRange { id: u32, vocab: usize },

    #[error("empty corpus")]
    EmptyCorpus,

    #[error("duplicate document id {0:?}")]
    DuplicateDocId(String),

    #[error("corrupt file {path}: {reason}")]
    Corrupt { path: PathBuf, reason: String },

    #[error("empty query set")]
    EmptyQuerySet,

    #[error("missing drift transition {from}->{to}")]
    MissingTransition { from: u32, to: u32 },

    #[error("transition {from}->{to} holds a multi-vector record; additive accumulation needs single vectors")]
    MixedRecordKind { from: u32, to: u32 },

    #[error("k = {k} exceeds the number of queries ({n})")]
    TooFewQueries { k: usize, n: usize },

    #[error("no task centroids stored")]
    NoCentroids,

    #[error("data mismatch: {0}")]
    DataMismatch(String),

    #[error("no index for task {0}")]
    MissingIndex(u32),

    #[error("query {0:?} has no relevance judgments")]
    MissingQrels(String),

    #[error("incomplete result matrix: {0}")]
    IncompleteMatrix(String),

    #[error("empty population: {0}")]
    EmptyPopulation(&'static str),

    #[error("invalid stream spec: {0}")]
    InvalidSpec(String),

    #[error("parse error in {path}:{line}: {reason}")]
    Parse {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error("qrels reference unknown document {doc_id:?} (query {query_id:?})")]
    DanglingReference { query_id: String, doc_id: String },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn corrupt(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Corrupt {
            path: path.into(),
            reason: reason.into(),
        }
    }
}
