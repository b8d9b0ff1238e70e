//! Tape-based reverse-mode differentiation with order-2 input jets.
//!
//! Input derivatives are pushed forward as [`Jet`]s whose components are
//! themselves tape nodes; parameter gradients then come from one reverse
//! sweep over the whole graph, derivative terms included. `floor` never
//! appears on the tape: callers compute it on values and feed the result back
//! in as a constant.

mod jet;
mod tape;
mod tensor;

pub use jet::{jet_eval, AxisOrder, Jet, Jet2, Tangent, Unary};
pub use tape::{pairwise_sum, Gradients, ParamId, Pointwise, Tape, Var};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AdError {
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },
    #[error("division by zero")]
    DivisionByZero,
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },
    #[error("backward root must be scalar, got shape {shape:?}")]
    NonScalarRoot { shape: (usize, usize) },
    #[error("stale node handle")]
    StaleHandle,
    #[error("index {index} out of bounds for {len} rows")]
    IndexOutOfBounds { index: usize, len: usize },
    #[error("{op} of an empty tensor")]
    Empty { op: &'static str },
    #[error("axis {axis} out of range for dimension {dim}")]
    AxisOutOfRange { axis: usize, dim: usize },
    #[error("jets track different axis counts: {lhs} vs {rhs}")]
    JetMismatch { lhs: usize, rhs: usize },
}
