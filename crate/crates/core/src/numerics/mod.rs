//! Dense tensors, a recording tape for reverse-mode differentiation, and a
//! finite-difference gradient checker.

mod gradcheck;
mod graph;
mod tensor;

pub use gradcheck::{finite_diff_check, relative_error, Parameters};
pub use graph::{euclidean, softmax, BatchStats, Graph, Var, PROB_FLOOR};
pub use tensor::Tensor;
