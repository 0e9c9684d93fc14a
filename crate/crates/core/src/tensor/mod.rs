//! Reverse-mode differentiation over dense `f64` arrays.
//!
//! A [`Graph`] records operations eagerly as they are applied. Leaves are
//! created with [`Graph::param`] (differentiated) or [`Graph::constant`];
//! [`Graph::backward`] walks the nodes in reverse creation order, which is a
//! reverse topological order because parents always precede children.
//!
//! Broadcasting is limited to scalar-vs-tensor in the elementwise ops. Any
//! other expansion goes through [`Graph::expand`].

mod array;
mod check;
mod graph;

pub use array::Tensor;
pub use check::{grad_check, grad_check_many};
pub use graph::{BinaryKind, Gradients, Graph, ReduceKind, UnaryKind, Var};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    ShapeMismatch { op: &'static str, lhs: Vec<usize>, rhs: Vec<usize> },
    #[error("{op}: expected rank {expected}, got shape {shape:?}")]
    Rank { op: &'static str, expected: usize, shape: Vec<usize> },
    #[error("{op}: axis {axis} out of range for rank {rank}")]
    Axis { op: &'static str, axis: usize, rank: usize },
    #[error("slice {start}..{end} out of range on axis {axis} of length {len}")]
    Range { axis: usize, start: usize, end: usize, len: usize },
    #[error("cannot expand axis {axis} of shape {shape:?} to {n}")]
    Expand { shape: Vec<usize>, axis: usize, n: usize },
    #[error("{op}: argument outside domain at index {index} (value {value})")]
    Domain { op: &'static str, index: usize, value: f64 },
    #[error("invalid shape {shape:?}")]
    InvalidShape { shape: Vec<usize> },
    #[error("shape {shape:?} does not match data length {len}")]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("conv1d: input length {len} with padding {padding} is shorter than kernel {kernel}")]
    ConvTooShort { len: usize, padding: usize, kernel: usize },
    #[error("backward root must hold one element, got shape {shape:?}")]
    NonScalarRoot { shape: Vec<usize> },
    #[error("graph already consumed by a backward pass")]
    GraphConsumed,
}

#[cfg(test)]
mod tests;
