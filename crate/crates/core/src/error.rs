use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("i/o error: {0}")]
    Stream(#[from] std::io::Error),

    // embedding store
    #[error("bad magic {found:?} at byte offset 0 (expected \"EMB1\")")]
    BadMagic { found: [u8; 4] },
    #[error("unsupported format version {0} at byte offset 4")]
    UnsupportedVersion(u16),
    #[error("unsupported dtype {0} at byte offset 18")]
    UnsupportedDtype(u8),
    #[error("truncated file: record {index} incomplete at byte offset {offset}")]
    Truncated { index: u64, offset: u64 },
    #[error("truncated header: {len} bytes, need 21")]
    TruncatedHeader { len: u64 },
    #[error("trailing bytes after record {count} at byte offset {offset}")]
    TrailingBytes { count: u64, offset: u64 },
    #[error("record {index}: {reason}")]
    InvalidRecord { index: u64, reason: String },
    #[error("record {index}: vector length {got} does not match dim {dim}")]
    DimensionMismatch { index: u64, got: usize, dim: usize },
    #[error("record {index}: non-finite value at component {component}")]
    NonFinite { index: u64, component: usize },
    #[error("invalid header: {0}")]
    InvalidHeader(String),
    #[error("metadata: {0}")]
    Metadata(String),

    // pooling
    #[error("input is already document-level")]
    WrongLevel,
    #[error("empty input")]
    EmptyInput,
    #[error("sentence {sentence_id} belongs to document {doc_id}, which has no label")]
    MissingDocument { sentence_id: u64, doc_id: u64 },

    // kmeans / router
    #[error("invalid k-means config: {0}")]
    InvalidConfig(String),
    #[error("too few points: {n} records for k = {k}")]
    TooFewPoints { n: usize, k: usize },
    #[error("dimension mismatch: model expects {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("cluster {0} has no model and no default is configured")]
    UnmappedCluster(usize),
    #[error("empty document")]
    EmptyDocument,

    // projection
    #[error("too few points for PCA: {0} (need at least 2)")]
    TooFewPointsPca(usize),
    #[error("projection dimension {d} out of range 1..={max}")]
    DimsOutOfRange { d: usize, max: usize },

    // evaluation
    #[error("item {0} has no oracle domain label")]
    UnlabeledItem(u64),
    #[error("assignment/data id mismatch: {0}")]
    IdMismatch(String),
    #[error("empty contingency table")]
    EmptyTable,
    #[error("domain column {0} has no items")]
    EmptyDomainColumn(i32),
    #[error("layer {layer}: item set differs from layer 0")]
    InconsistentItems { layer: usize },
    #[error("layer {layer} ({path}): {source}")]
    Layer {
        layer: usize,
        path: PathBuf,
        #[source]
        source: Box<Error>,
    },

    // corpus
    #[error("too few documents: {0} (need at least 3)")]
    TooFewDocuments(usize),
    #[error("invalid split fractions: {0}")]
    InvalidFractions(String),
    #[error("domain {domain} has {available} pairs, {requested} requested")]
    InsufficientDomain {
        domain: i32,
        available: usize,
        requested: usize,
    },
    #[error("sentence {0} has no cluster in the partition plan")]
    UnassignedSentence(u64),
    #[error("corpus: {0}")]
    Corpus(String),

    #[error("pipeline config: {0}")]
    Config(String),
    #[error("internal error: {0}")]
    Internal(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code: 1 for input/validation problems, 2 for internal failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Internal(_) => 2,
            Error::Layer { source, .. } => source.exit_code(),
            _ => 1,
        }
    }
}
