use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("non-finite coordinate at line {line}")]
    NonFiniteCoordinate { line: usize },

    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),

    #[error("format {format} cannot store field(s): {fields}")]
    UnsupportedFields { format: &'static str, fields: String },

    #[error("point cloud is empty")]
    EmptyCloud,

    #[error("unknown class id {id} at line {line}")]
    UnknownClassId { id: i64, line: usize },

    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("point id {id} out of range for cloud of {len} points")]
    InvalidId { id: usize, len: usize },

    #[error("radius must be positive and finite, got {0}")]
    NonPositiveRadius(f64),

    #[error("at least {needed} points required, got {got}")]
    TooFewPoints { needed: usize, got: usize },

    #[error("normal at point {0} is invalid")]
    InvalidCenterNormal(usize),

    #[error("empty input")]
    EmptyInput,

    #[error("negative or non-finite value {0} cannot be binned")]
    NegativeValue(f64),

    #[error("INAD field has no valid points")]
    NoValidPoints,

    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),

    #[error("invariant violated: {0}")]
    InvariantViolation(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("cloud too sparse: {0}")]
    InsufficientDensity(String),

    #[error("insufficient points for a minimal sample: need {needed}, have {got}")]
    InsufficientPoints { needed: usize, got: usize },

    #[error("no model found: best candidate had {best} inliers, {required} required")]
    NoModelFound { best: usize, required: usize },

    #[error("bad scene spec: {0}")]
    BadSpec(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            line,
            message: message.into(),
        }
    }

    /// True for errors caused by bad user input or configuration; false for
    /// failures of the environment or of a computation on valid input.
    pub fn is_usage(&self) -> bool {
        !matches!(
            self,
            Error::Io { .. }
                | Error::NoValidPoints
                | Error::InsufficientDensity(_)
                | Error::InsufficientPoints { .. }
                | Error::NoModelFound { .. }
                | Error::EmptyInput
                | Error::TooFewPoints { .. }
                | Error::InvalidCenterNormal(_)
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
