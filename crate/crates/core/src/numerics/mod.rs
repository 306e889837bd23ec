//! Dense tensors, reverse-mode autodiff, layers and optimizers.

pub mod gradcheck;
pub mod graph;
pub mod kernels;
pub mod layers;
pub mod optim;
pub mod params;
pub mod rng;
pub mod tensor;

pub use graph::{BatchStats, Gradients, Graph, Var};
pub use layers::Bound;
pub use optim::{adam_step, sgd_step, AdamConfig, AdamState};
pub use params::ParamSet;
pub use rng::RngStream;
pub use tensor::Tensor;
