use std::path::PathBuf;

use crate::tensor::Shape4;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid shape {0:?}: every extent must be at least 1")]
    ZeroExtent([usize; 4]),
    #[error("shape {0:?} overflows the element count")]
    ShapeOverflow([usize; 4]),
    #[error("data length {len} does not match shape {shape} ({expected} elements)")]
    DataLength { shape: Shape4, len: usize, expected: usize },
    #[error("{op}: shape mismatch between {left} and {right}")]
    ShapeMismatch {
        op: &'static str,
        left: Shape4,
        right: Shape4,
    },
    #[error("{op}: {detail}")]
    InvalidShape { op: &'static str, detail: String },
    #[error("{op}: produced a non-finite value at flat index {index}")]
    NonFinite { op: String, index: usize },
    #[error("empty input to {0}")]
    Empty(&'static str),
    #[error("node {0} is not on this tape")]
    UnknownNode(usize),
    #[error("loss must have shape (1,1,1,1), got {0}")]
    NonScalarLoss(Shape4),
    #[error("unknown parameter or buffer '{0}'")]
    UnknownParam(String),
    #[error("duplicate parameter name '{0}'")]
    DuplicateParam(String),
    #[error("non-finite gradient for parameter '{0}'")]
    NonFiniteGradient(String),
    #[error("target mask must be binary, found {value} at flat index {index}")]
    NonBinaryTarget { index: usize, value: f64 },
    #[error("mask must be binary, found {value} at flat index {index}")]
    NonBinaryMask { index: usize, value: f64 },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("netpbm parse error at byte {offset}: {reason}")]
    Netpbm { offset: usize, reason: String },
    #[error("tensor dump: {0}")]
    Dump(String),
    #[error("dtype mismatch: expected {expected}, found {found}")]
    DType {
        expected: crate::DType,
        found: crate::DType,
    },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("dataset: {0}")]
    Dataset(String),
    #[error("training diverged at epoch {epoch}: loss is not finite")]
    Diverged { epoch: usize },
    #[error("I/O error on {}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
