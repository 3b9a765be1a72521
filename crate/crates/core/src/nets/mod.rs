//! Networks: MLPs, the branch/trunk operator model, the hidden-physics and
//! parameter networks, batched derivative kernels and checkpoints.

pub mod checkpoint;
pub mod fastmath;
pub mod jet;
mod mlp;
mod operator;

pub use mlp::{init_parameters, Activation, Mlp, MlpSpec, MlpTape};
pub use operator::{
    forward_operator, spatial_derivatives, time_derivative, HiddenPhysicsNet, OperatorModel,
    OperatorSpec, ParameterNet,
};
