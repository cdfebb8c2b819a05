use std::path::PathBuf;

use crate::models::ModelKind;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: malformed record: {message}")]
    MalformedLine { line: usize, message: String },

    #[error("line {line}: missing required field `{field}`")]
    MissingField { line: usize, field: &'static str },

    #[error("line {line}: `{field}` has dimension {found}, expected {expected}")]
    DimensionMismatch {
        line: usize,
        field: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("vocabulary is empty: no distinct tokens")]
    EmptyVocabulary,

    #[error("corpus has no document with an in-vocabulary token")]
    EmptyCorpus,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{0} is a zero vector; cosine similarity is undefined")]
    ZeroVector(&'static str),

    #[error("model kind `{kind}` cannot infer topics from {requested}")]
    UnsupportedModality {
        kind: ModelKind,
        requested: &'static str,
    },

    #[error("checkpoint format version {found} is not supported (expected {expected})")]
    VersionMismatch { expected: u32, found: u32 },

    #[error("checkpoint checksum mismatch (file truncated or corrupted)")]
    ChecksumMismatch,

    #[error("checkpoint holds a `{found}` model, expected `{expected}`")]
    KindMismatch { expected: ModelKind, found: ModelKind },

    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),

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
}
