//! Dense f32 tensors and a recording graph with reverse-mode gradients.

mod graph;
mod tensor;

pub use graph::{Gradients, Graph, Var};
pub use tensor::Tensor;
