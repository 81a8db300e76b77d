use alloc::string::String;

use crate::field::Shape;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid shape {slices}x{rows}x{cols}: {reason}")]
    InvalidShape {
        slices: usize,
        rows: usize,
        cols: usize,
        reason: &'static str,
    },
    #[error("shape mismatch: expected {expected:?}, got {actual:?}")]
    ShapeMismatch { expected: Shape, actual: Shape },
    #[error("buffer length {actual} does not match shape volume {expected}")]
    BufferLength { expected: usize, actual: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("geometry violation: {0}")]
    Geometry(String),
    #[error("non-finite value encountered in {0}")]
    NonFinite(String),
    #[error("missing reference object")]
    MissingReference,
    #[error("unknown record id `{0}`")]
    UnknownRecord(String),
    /// A blocking evaluation was abandoned because the session is stopping.
    #[error("interrupted")]
    Interrupted,
    #[error("operator {index} ({op}) failed: {message}")]
    Operator {
        index: usize,
        op: String,
        message: String,
    },
}
