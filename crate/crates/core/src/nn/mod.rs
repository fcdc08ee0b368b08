//! Dense tensors, reverse-mode autodiff, MLPs and the Adam optimizer.

mod adam;
mod check;
mod gemm;
mod mlp;
mod spectral;
mod tape;
mod tensor;

pub use adam::{step_lr, Adam};
pub use check::{gradient_check, GradCheck};
pub use mlp::Mlp;
pub use spectral::{RetainedRow, SpectralPlan};
pub use tape::{Tape, Var};
pub use tensor::Tensor;
