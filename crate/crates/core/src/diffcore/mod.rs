//! Differentiable computation core: tensors, a reverse-mode tape, MLP
//! blocks, Adam, and a finite-difference oracle.

mod adam;
mod gradcheck;
mod graph;
pub(crate) mod kernels;
mod mlp;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use gradcheck::{finite_diff_grad, max_relative_error, mlp_gradient_sweep, GradientSweep, SWEEP_STEP};
pub use graph::{Gradients, Graph, Var};
pub use mlp::{Activation, Linear, Mlp, MlpConfig, MlpVars};
pub use tensor::Tensor;
