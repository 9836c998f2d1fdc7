//! Dense `f64` tensors with reverse-mode differentiation.

pub mod gradcheck;
pub mod graph;
pub mod tensor;

pub use gradcheck::{gradcheck, GradcheckOptions, GradcheckReport};
pub use graph::{Gradients, Graph, Var};
pub use tensor::Tensor;
