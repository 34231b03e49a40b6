use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("field `{field}` has length {actual}, expected {expected}")]
    FieldLength {
        field: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("expected length {expected}, got {actual}")]
    Length { expected: usize, actual: usize },

    #[error("sequence has {frames} frame(s), at least {min} required")]
    TooFewFrames { frames: usize, min: usize },

    #[error("frame {frame} has dimension {actual}, expected {expected}")]
    FrameDim {
        frame: usize,
        expected: usize,
        actual: usize,
    },

    #[error("normalization statistics are missing")]
    MissingStats,

    #[error("invalid mouth index set: {0}")]
    MouthIndices(String),

    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },

    #[error("{op} requires a scalar, got shape {shape:?}")]
    NotScalar {
        op: &'static str,
        shape: (usize, usize),
    },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("non-finite loss at iteration {iteration}: {what}")]
    NonFiniteLoss { iteration: usize, what: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid style spec: {0}")]
    StyleSpec(String),

    #[error("no training windows: {0}")]
    NoWindows(String),

    #[error("parse error at row {row}, column {column}: {message}")]
    Parse {
        row: usize,
        column: usize,
        message: String,
    },

    #[error("bad file format: {0}")]
    Format(String),

    #[error("unsupported version {found}, expected {expected}")]
    Version { found: u32, expected: u32 },

    #[error("file truncated while reading {0}")]
    Truncated(String),

    #[error("{0}")]
    Invalid(String),

    #[error("{path}: {source}")]
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
}
