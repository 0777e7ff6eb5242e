//! Minimal differentiable tensor machinery backing the networks.

mod graph;
pub mod kernels;
mod optim;
mod param;
mod tensor;

pub use graph::{Gradients, Graph, ResizePlan, Var};
pub use optim::Adam;
pub use param::{ParamId, ParamStore};
pub use tensor::{from_le_bytes, to_le_bytes, Tensor};

#[cfg(test)]
mod gradcheck;
