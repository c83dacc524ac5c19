use std::path::PathBuf;

use crate::vocab::TokenId;

pub type Result<T, E = GradError> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum GradError {
    #[error("invalid token id {id} (vocabulary size {vocab_size})")]
    InvalidToken { id: TokenId, vocab_size: usize },

    #[error("replay source exhausted after {steps} steps")]
    ReplayUnderrun { steps: usize },

    #[error("sequence of length {len} is too short, need at least 2 tokens")]
    SequenceTooShort { len: usize },

    #[error("{scores} transition scores do not align with a sequence of {tokens} tokens")]
    ScoreAlignment { tokens: usize, scores: usize },

    #[error("cannot combine graphs with vocabulary sizes {left} and {right}")]
    IncompatibleGraph { left: usize, right: usize },

    #[error("incompatible artifacts: {0}")]
    IncompatibleArtifacts(String),

    #[error("shape mismatch: expected length {expected}, found {found}")]
    Shape { expected: usize, found: usize },

    #[error("non-finite value {value} at index {index}")]
    NonFinite { index: usize, value: f64 },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("empty prefix: a logit source needs at least one token of context")]
    EmptyPrefix,

    #[error("unknown {kind} `{name}` (available: {available})")]
    UnknownStrategy {
        kind: &'static str,
        name: String,
        available: String,
    },

    #[error("bridge protocol error: {0}")]
    Protocol(String),

    #[error("bridge error: {0}")]
    Bridge(String),

    #[error("bridge timed out after {0:?}")]
    BridgeTimeout(std::time::Duration),

    #[error("malformed graph file: {0}")]
    GraphFormat(String),

    #[error("malformed vocabulary: {0}")]
    VocabFormat(String),

    #[error("malformed corpus at line {line}: {reason}")]
    MalformedCorpus { line: usize, reason: String },

    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl GradError {
    pub(crate) fn file(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        GradError::File {
            path: path.into(),
            source,
        }
    }
}
