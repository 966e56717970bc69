//! Dense-tensor reverse-mode differentiation.
//!
//! A [`Graph`] is rebuilt for every forward pass. Parameters enter as leaves
//! copied from [`Tensor`]s; after [`Graph::backward`] their adjoints are read
//! back with [`Graph::grad`] and accumulated into the owning tensors.
//!
//! Every primitive works on the last axis of a row-major array, which is all
//! the model needs: matrix products, bias broadcasts, elementwise maps,
//! reductions, concatenation, slicing, masked softmax, scatter-add and row
//! stacking.

mod gradcheck;
mod graph;
mod tensor;

pub use gradcheck::{central_difference, grad_check, grad_check_against, GradCheckReport};
pub use graph::{Axis, Graph, Var};
pub use tensor::Tensor;


/// Floor applied before taking the log of any probability.
pub const LOG_FLOOR: f64 = 1e-12;
