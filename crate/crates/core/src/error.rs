use std::path::PathBuf;

use thiserror::Error;

use crate::tensor::Shape;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch, expected {expected}, got {got}")]
    ShapeMismatch {
        op: &'static str,
        expected: String,
        got: String,
    },

    #[error("{op}: output would have zero spatial size for input {input}")]
    EmptyOutput { op: &'static str, input: Shape },

    #[error("conv2d: {what} ({value}) is not divisible by groups ({groups})")]
    GroupDivisibility {
        what: &'static str,
        value: usize,
        groups: usize,
    },

    #[error("{op}: spatial dims {h}x{w} must be even")]
    OddSpatial { op: &'static str, h: usize, w: usize },

    #[error("{op}: spatial dims {h}x{w} must be divisible by {divisor}")]
    IndivisibleInput {
        op: &'static str,
        h: usize,
        w: usize,
        divisor: usize,
    },

    #[error("upsample: unsupported scale {0} (expected 2, 4 or 8)")]
    UnsupportedScale(usize),

    #[error("{op}: value {value} is not binary")]
    NonBinary { op: &'static str, value: f64 },

    #[error("{op}: spatial dims {h}x{w} must be square")]
    NonSquare { op: &'static str, h: usize, w: usize },

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("duplicate parameter name {0:?}")]
    DuplicateParam(String),

    #[error("missing gradient for parameter {0:?}")]
    MissingGradient(String),

    #[error("non-finite loss {loss} at epoch {epoch}, step {step}")]
    NonFiniteLoss { epoch: usize, step: usize, loss: f64 },

    #[error("split {0:?} is empty")]
    EmptySplit(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: cannot decode image: {message}")]
    Decode { path: PathBuf, message: String },

    #[error("no mask found for image {0:?}")]
    MissingMask(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("checkpoint: checksum mismatch")]
    ChecksumMismatch,

    #[error("checkpoint: unsupported format version {0}")]
    UnsupportedVersion(u32),
}

impl Error {
    pub(crate) fn shape(op: &'static str, expected: impl ToString, got: impl ToString) -> Self {
        Error::ShapeMismatch {
            op,
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
