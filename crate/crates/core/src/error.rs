use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: length {len} bytes is not a multiple of {record} bytes")]
    Truncated { path: PathBuf, len: u64, record: u64 },

    #[error("non-finite value at point {index}")]
    NonFinite { index: usize },

    #[error("remission {value} at point {index} outside [0, 1]")]
    Remission { index: usize, value: f32 },

    #[error("length mismatch: expected {expected}, found {found}")]
    LengthMismatch { expected: usize, found: usize },

    #[error("{field} value {value} at point {index} does not fit in 16 bits")]
    Overflow {
        index: usize,
        field: &'static str,
        value: u32,
    },

    #[error("malformed pose at line {line}: {reason}")]
    MalformedPose { line: usize, reason: String },

    #[error("calibration file {0} has no Tr entry")]
    MissingTr(PathBuf),

    #[error("missing file {0}")]
    MissingFile(PathBuf),

    #[error("scan index {index} out of range (sequence has {len} scans)")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("invalid format: {0}")]
    Format(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("variance must be strictly positive (row {row}, dim {dim}, value {value})")]
    NonPositiveVariance { row: usize, dim: usize, value: f64 },

    #[error("feature mode {0} needs per-point embeddings")]
    MissingEmbeddings(&'static str),

    #[error("cannot backfill from an empty volume")]
    EmptyVolume,

    #[error("raw class id {0} is not in the class map")]
    UnknownClass(u32),

    #[error("invariant violated: {0}")]
    Invariant(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
