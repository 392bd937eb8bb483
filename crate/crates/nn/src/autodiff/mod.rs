//! Minimal reverse-mode automatic differentiation over dense matrices.
//!
//! A [`Graph`] records one forward pass. Parameters live in a
//! [`ParameterStore`] that the graph borrows; [`Graph::backward`] returns
//! their gradients as a separate [`Gradients`] value so the store can be
//! updated once the graph is dropped.

mod gradcheck;
mod graph;
mod params;
mod tensor;

pub use gradcheck::{grad_check, grad_check_limited, relative_error, GradCheckReport};
pub use graph::{Gradients, Graph, Var};
pub use params::{Init, ParamId, Parameter, ParameterStore, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use tensor::{Precision, Real, Tensor};

#[cfg(test)]
mod tests;
