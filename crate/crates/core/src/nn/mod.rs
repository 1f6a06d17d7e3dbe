//! Minimal reverse-mode autodiff, the two U-Nets, losses and Adam.

mod adam;
mod conv;
pub mod gradcheck;
mod graph;
mod loss;
mod model;
mod tensor;
mod unet;

pub use adam::{AdamConfig, AdamState};
pub use conv::{conv2d_backward, conv2d_forward, ConvSpec};
pub use graph::{Graph, LinearOp, Var};
pub use loss::{loss_fbp, loss_prior, loss_sino, loss_total, LossWeights};
pub use model::{
    ForwardNodes, InferOutput, LossNodes, LossValues, Model, ModelSpec, NetInputs, Operators, ProjectorOp,
    ProjectorOpKind, Targets, Variant, IMAGE_INPUT_RANGE,
};
pub use tensor::{Real, Tensor};
pub use unet::UNetSpec;
