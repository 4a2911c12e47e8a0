//! Dense `f64` tensors and reverse-mode differentiation over them.

mod dense;
pub mod gradcheck;
mod graph;

pub use dense::Tensor;
pub use gradcheck::{check_gradient, finite_diff_gradient, GradCheck};
pub use graph::{Graph, Var};
