//! Dense tensors, a reverse-mode tape, Adam, seeded randomness and the
//! checkpoint container.

pub mod checkpoint;
pub mod gradcheck;
pub mod graph;
pub mod params;
pub mod rng;
pub mod tensor;

pub use checkpoint::Checkpoint;
pub use graph::{evaluate_with_gradients, softmax_row, Gradients, Graph, Var};
pub use params::{adam_step, ParamSlot, ParamStore};
pub use rng::Rng;
pub use tensor::Tensor;
