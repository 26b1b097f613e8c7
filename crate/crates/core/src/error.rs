use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the linkage pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("contract violation: {0}")]
    ContractViolation(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("token id {id} out of range for vocabulary of {size}")]
    IdOutOfRange { id: usize, size: usize },

    #[error("description is empty after normalization")]
    FilteredOut,
    #[error("split needs at least 10 pairs, got {0}")]
    SplitTooSmall(usize),
    #[error("item has no images")]
    NoImages,

    #[error("bad magic bytes in feature file")]
    BadMagic,
    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimMismatch { expected: usize, found: usize },
    #[error("truncated file: {0}")]
    TruncatedFile(String),
    #[error("duplicate id {0}")]
    DuplicateId(u64),
    #[error("missing id {0}")]
    MissingId(u64),
    #[error("ids not strictly increasing at id {0}")]
    UnorderedIds(u64),
    #[error("non-finite feature value for id {0}")]
    NonFiniteFeature(u64),

    #[error("bad embedding file at line {line}: {reason}")]
    BadEmbeddingFile { line: usize, reason: String },

    #[error("feature {0} is constant on the training data")]
    ConstantFeature(usize),
    #[error("no positive labels present")]
    NoPositives,
    #[error("reports are not over the same pair set")]
    PairSetMismatch,

    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("unsupported format version {0}")]
    VersionMismatch(u32),
    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),

    #[error("missing input: {}", .0.display())]
    MissingInput(PathBuf),
    #[error("parse error at line {line}: {reason}")]
    Parse { line: u64, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl From<csv::Error> for Error {
    fn from(err: csv::Error) -> Self {
        let line = err.position().map(|p| p.line()).unwrap_or(0);
        match err.into_kind() {
            csv::ErrorKind::Io(io) => Error::Io(io),
            kind => Error::Parse {
                line,
                reason: format!("{kind:?}"),
            },
        }
    }
}
