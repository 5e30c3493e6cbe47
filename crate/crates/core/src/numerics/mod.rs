//! Dense row-major `f64` tensors with a dynamic reverse-mode tape.
//!
//! Every model computation in this crate is expressed as a sequence of
//! primitive operations recorded on a [`Tape`]. A fresh tape is built for
//! each forward pass, so graph topology may depend on the batch.

mod check;
mod tape;
mod tensor;

pub use check::{central_difference, gradient_check};
pub use tape::{Tape, Var};
pub(crate) use tape::sigmoid;
pub use tensor::Tensor;

use thiserror::Error;

/// Negative slope used by every leaky ReLU in the model.
pub const LEAKY_RELU_SLOPE: f64 = 0.2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericsError {
    #[error("{op}: shape mismatch between {left:?} and {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("{op}: non-finite value encountered")]
    NonFinite { op: &'static str },
    #[error("backward requires a scalar root, got shape {0:?}")]
    NonScalarRoot(Vec<usize>),
    #[error("{op}: index {index} out of bounds for length {len}")]
    IndexOutOfBounds {
        op: &'static str,
        index: usize,
        len: usize,
    },
    #[error("{0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, NumericsError>;
