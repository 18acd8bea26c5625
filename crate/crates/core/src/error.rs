use thiserror::Error;

#[derive(Debug, Error)]
pub enum KgError {
    #[error("invalid id {0:?}: must be non-empty and contain no tab or newline")]
    InvalidId(String),
    #[error("empty label for {0}")]
    EmptyLabel(String),
    #[error("{path}:{line}: {message}")]
    Malformed {
        path: String,
        line: usize,
        message: String,
    },
    #[error("line {line}: unresolved reference in row {row:?}")]
    Unresolved { line: usize, row: String },
    #[error("{0}: {1}")]
    Io(String, #[source] std::io::Error),
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum BucketError {
    #[error("bucket {name}: min_degree {min} exceeds max_degree {max}")]
    InvertedBounds { name: String, min: u64, max: u64 },
    #[error("duplicate bucket name {0}")]
    DuplicateName(String),
    #[error("buckets {0} and {1} overlap")]
    Overlap(String, String),
    #[error("unknown bucket {0}")]
    Unknown(String),
}

#[derive(Debug, Error)]
pub enum FilterError {
    #[error("unknown property {0}")]
    UnknownProperty(String),
    #[error("a reject verdict needs a reason")]
    MissingReason,
    #[error("ledger line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("ledger io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BackendError {
    #[error("backend request timed out")]
    Timeout,
    #[error("backend request failed: {0}")]
    Request(String),
    #[error("unexpected backend response: {0}")]
    Response(String),
    #[error("backend configuration: {0}")]
    Config(String),
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PromptError {
    #[error("no label for {0}")]
    UnresolvedLabel(String),
}

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("duplicate passage id {0}")]
    DuplicatePassage(String),
    #[error("passage {0} has empty text")]
    EmptyPassage(String),
    #[error("{path}:{line}: {message}")]
    Malformed {
        path: String,
        line: usize,
        message: String,
    },
    #[error("vector file: {0}")]
    VectorFile(String),
    #[error("vector file has {vectors} rows but id file has {ids}")]
    RowMismatch { vectors: u64, ids: usize },
    #[error("embedding dimension {got} does not match index dimension {expected}")]
    Dimension { expected: usize, got: usize },
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("{0}: {1}")]
    Io(String, #[source] std::io::Error),
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EvalError {
    #[error("annotation for unknown qid {0}")]
    UnknownQid(String),
    #[error("annotation for {0}, which was scored correct")]
    AnnotatedCorrect(String),
    #[error("unknown error category {0:?}")]
    UnknownCategory(String),
}
