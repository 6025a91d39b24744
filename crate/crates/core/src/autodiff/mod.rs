//! Minimal reverse-mode automatic differentiation for small feed-forward
//! networks, with gradients for both parameters and inputs.

mod kernels;
mod mlp;
mod optim;
mod tape;
mod tensor;

pub use mlp::{soft_update, Activation, Layer, LayerGrads, Mlp, MlpTrace, MlpVars};
pub use optim::{adam_step, clip_grad_norm, AdamConfig, AdamState};
pub use tape::{Gradients, Tape, Var};
pub use tensor::{global_norm, sign, Tensor};
