use std::path::PathBuf;

use thiserror::Error;

/// Shape disagreement between operands, reported with both shapes.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{op}: {reason} (lhs {lhs:?}, rhs {rhs:?})")]
pub struct ShapeError {
    pub op: &'static str,
    pub lhs: Vec<usize>,
    pub rhs: Vec<usize>,
    pub reason: String,
}

impl ShapeError {
    pub fn new(op: &'static str, lhs: &[usize], rhs: &[usize], reason: impl Into<String>) -> Self {
        Self {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
            reason: reason.into(),
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Shape(#[from] ShapeError),

    #[error("degenerate landmarks: {0}")]
    DegenerateLandmarks(String),

    #[error("invalid landmarks: {0}")]
    InvalidLandmarks(String),

    #[error("invalid {what}: {reason}")]
    Invalid { what: String, reason: String },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("checkpoint has bad magic {0:?}")]
    BadMagic([u8; 4]),

    #[error("unsupported checkpoint version {found} (this build reads {supported})")]
    UnsupportedVersion { found: u32, supported: u32 },

    #[error("truncated file: {0}")]
    Truncated(String),

    #[error("parameter {name}: expected shape {expected:?}, found {found:?}")]
    ParamShape {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("image parse error: {0}")]
    ImageParse(String),

    #[error("{path}: row {row}, column {column}: {reason}")]
    Manifest {
        path: PathBuf,
        row: usize,
        column: String,
        reason: String,
    },

    #[error("singular normal equations: {0}; use a positive ridge penalty")]
    Singular(String),

    #[error("non-finite loss at epoch {epoch}; first non-finite activation in layer {layer}")]
    NonFinite { epoch: usize, layer: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {reason}")]
    Parse { path: PathBuf, reason: String },

    #[error("{0}")]
    Failed(String),
}

impl Error {
    pub fn invalid(what: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Invalid {
            what: what.into(),
            reason: reason.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad user input rather than runtime failure.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Invalid { .. }
                | Error::InvalidLandmarks(_)
                | Error::DegenerateLandmarks(_)
                | Error::Manifest { .. }
                | Error::Parse { .. }
                | Error::Domain(_)
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
