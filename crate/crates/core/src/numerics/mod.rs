//! Dense tensors with reverse-mode automatic differentiation.
//!
//! A [`Tape`] records primitives applied to [`Var`] handles during one
//! forward pass; [`Tape::backward`] consumes it and yields adjoints.
//! Models keep their learnable tensors in a [`ParamStore`] and bind them to a
//! fresh tape per forward pass.

mod gradcheck;
mod ops;
mod optim;
mod params;
mod real;
mod tape;
mod tensor;

use thiserror::Error;

pub use gradcheck::{gradient_check, gradient_check_with, GradCheck, Stencil};
pub use ops::{backward as primitive_vjp, forward as primitive_forward, window_partition_index, Primitive};
pub use optim::{cosine_lr, Adam};
pub use params::{batch_gradients, AdamState, Bound, ParamId, ParamStore, Parameter};
pub use real::{gemm, Real};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericsError {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("non-finite value produced by {op}")]
    NonFinite { op: String },
    #[error("unknown primitive `{0}`")]
    UnknownPrimitive(String),
    #[error("gradient requested of non-scalar output with shape {0:?}")]
    NonScalarOutput(Vec<usize>),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

impl NumericsError {
    pub(crate) fn shape(op: &'static str, detail: String) -> Self {
        NumericsError::ShapeMismatch { op, detail }
    }
}
