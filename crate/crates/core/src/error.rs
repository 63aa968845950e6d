use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("line {line}: relevance label {label} outside [0, 4]")]
    LabelOutOfRange { line: usize, label: i64 },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid ranking: {0}")]
    InvalidRanking(String),

    #[error("document {doc} is not a candidate of query {query}")]
    UnknownDocument { query: String, doc: usize },

    #[error("unknown query id {0:?}")]
    UnknownQuery(String),

    #[error("zero denominator in {estimator} correction for a nonzero signal")]
    ZeroDenominator { estimator: &'static str },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("no query has a nonzero relevance label")]
    NoRelevantQueries,

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
