use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error in {source_name} at line {line}, column {column}: {message}")]
    Parse {
        source_name: String,
        line: usize,
        column: usize,
        message: String,
    },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("unknown relation `{0}`")]
    UnknownRelation(String),

    #[error("unknown attribute `{0}`")]
    UnknownAttribute(String),

    #[error("ambiguous attribute `{name}` (found in {candidates})")]
    AmbiguousAttribute { name: String, candidates: String },

    #[error("join graph is disconnected: {0}")]
    DisconnectedJoinGraph(String),

    #[error("unsupported construct: {0}")]
    Unsupported(String),

    #[error("{what}: {n} exceeds limit {limit}")]
    LimitExceeded {
        what: &'static str,
        n: usize,
        limit: usize,
    },

    #[error(
        "signature `{signature}` re-interned with size {new} but existing node has size {existing}"
    )]
    InconsistentSize {
        signature: String,
        existing: f64,
        new: f64,
    },

    #[error("attaching op under eq-node {0} would create a cycle")]
    Cycle(u32),

    #[error("dangling reference: {0}")]
    Dangling(String),

    #[error("root not reachable: {0}")]
    UnreachableRoot(String),

    #[error("unsupported format version {found} (expected {expected})")]
    FormatVersion { found: u64, expected: u64 },

    #[error("checksum mismatch: file is corrupt")]
    Checksum,

    #[error(
        "catalog fingerprint mismatch: history built for {expected}, current schema is {found}"
    )]
    FingerprintMismatch { expected: String, found: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }
}
