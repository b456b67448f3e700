//! Small dense-tensor engine with reverse-mode automatic differentiation.
//!
//! Everything is 64-bit and CPU-only. Values are recorded on a [`Graph`] as
//! operations execute; [`Graph::backward`] then returns a [`Gradients`] map
//! for every node that depends on a trainable leaf.

pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod kernels;
pub mod tensor;

pub use error::{Result, TensorError};
pub use gradcheck::{finite_diff_check, finite_diff_check_at, finite_diff_check_with, relative_error, GradCheckReport, Stencil};
pub use graph::{Gradients, Graph, Var, MIN_NORM};
pub use tensor::Tensor;
