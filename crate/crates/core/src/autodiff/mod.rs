//! Minimal reverse-mode automatic differentiation over dense `f64` arrays.
//!
//! A [`Graph`] records every operation executed on it. Values live in the
//! graph's nodes and are addressed through copyable [`Var`] handles; once
//! a node is created its value never changes. [`Graph::backward`] walks the
//! recorded nodes in reverse creation order (a valid reverse topological
//! order, since a node can only consume earlier nodes) and accumulates
//! gradients additively into every input that requires them.
//!
//! The op set is exactly what the toy contour proposal network needs:
//! convolutions, pointwise nonlinearities, pooling/upsampling, batch-stat
//! normalization, and a handful of fused ops for the contour losses
//! (descriptor packing, Fourier sampling, local refinement lookups).

mod gradcheck;
mod graph;
mod ops;
mod tensor;

pub use gradcheck::{grad_check, grad_check_many, GradCheckReport};
pub use graph::{CustomOp, Gradients, Graph, Var};
pub use tensor::Tensor;

use alloc::string::String;
use alloc::vec::Vec;

/// Errors raised while building or differentiating a graph.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AutodiffError {
    #[error("{op}: shape mismatch, {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("tensor shape {shape:?} does not hold {len} values")]
    Length { shape: Vec<usize>, len: usize },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("backward needs a scalar loss, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("variable belongs to a different graph")]
    Detached,
    #[error("{0}")]
    Invalid(String),
}

pub type Result<T> = core::result::Result<T, AutodiffError>;

pub(crate) fn shape_err(op: &'static str, detail: String) -> AutodiffError {
    AutodiffError::Shape { op, detail }
}
