//! Minimal dense-tensor engine with reverse-mode automatic differentiation.
//!
//! The engine supplies exactly the primitives a small recurrent-network stack
//! needs — matrix product, bias broadcast, elementwise arithmetic, sigmoid /
//! tanh, non-affine layer normalization, inverted dropout, row concat/slice,
//! and mean-squared-error — recorded on a define-by-run [`Tape`] that is
//! rebuilt every training step.
//!
//! Design constraints the rest of the workspace relies on:
//!
//! * **Determinism.** Every kernel accumulates along its inner dimension in a
//!   fixed order; parallelism only splits independent output rows. Results
//!   are therefore bitwise identical regardless of worker count.
//! * **f64 math.** All forward/backward computation is in 64-bit floats;
//!   32-bit storage only appears at the checkpoint boundary (elsewhere).
//! * **Single-graph steps.** One tape is single-threaded; concurrency happens
//!   across independent tapes (folds, experiment cells), never inside one.

mod array;
mod check;
mod tape;

pub use array::Array;
pub use check::{gradient_check, GradCheckReport};
pub use tape::{Tape, Var};

/// Errors surfaced by tape operations.
#[derive(Debug, thiserror::Error)]
pub enum TensorError {
    #[error("{op}: incompatible shapes {}x{} vs {}x{}", lhs.0, lhs.1, rhs.0, rhs.1)]
    ShapeMismatch { op: &'static str, lhs: (usize, usize), rhs: (usize, usize) },

    #[error("{op}: {message}")]
    InvalidArgument { op: &'static str, message: String },

    #[error("{op}: value belongs to a different tape")]
    ForeignVar { op: &'static str },

    #[error("backward already called on this tape")]
    BackwardTwice,

    #[error("backward requires a scalar loss, got {}x{}", shape.0, shape.1)]
    NotScalarLoss { shape: (usize, usize) },
}
