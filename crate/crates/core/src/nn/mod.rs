//! Minimal differentiable network engine.

mod checkpoint;
mod layers;
mod loss;
mod model;
mod optim;

pub use checkpoint::{Checkpoint, FORMAT_VERSION};
pub use layers::{LayerSpec, Shape3};
pub use loss::{softmax_cross_entropy, LossKind, Objective};
pub use model::{argmax, ClassifierModel, ModelSpec, Trace};
pub use optim::Sgd;
