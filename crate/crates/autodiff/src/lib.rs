//! Dense `f64` arrays with tape-based reverse-mode differentiation.
//!
//! Operations run eagerly on [`Var`] handles and, when any input is a
//! tracked parameter, are appended to a [`Tape`]. [`Tape::backward`] replays
//! the tape in reverse to produce gradients for every parameter leaf.

mod array;
mod backward;
pub mod gradcheck;
pub mod kernels;
pub mod nn;
mod ops;
mod tape;

pub use array::Array;
pub use gradcheck::{grad_check, GradCheckOptions, GradCheckReport};
pub use tape::{Gradients, PadMode, PatchSpec, Tape, Var};

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch { op: &'static str, lhs: Vec<usize>, rhs: Vec<usize> },
    #[error("{op}: index {index} out of range for axis of length {len}")]
    IndexOutOfRange { op: &'static str, index: usize, len: usize },
    #[error("{op}: {msg}")]
    InvalidArgument { op: &'static str, msg: String },
    #[error("data of length {len} does not fill shape {shape:?}")]
    DataLength { len: usize, shape: Vec<usize> },
    #[error("backward needs a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("{op} produced non-finite values from finite inputs")]
    NonFinite { op: &'static str },
}

pub type Result<T> = std::result::Result<T, Error>;
