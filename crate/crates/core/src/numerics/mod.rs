//! Dense numeric substrate: row-major f64 tensors, two-hidden-layer MLPs
//! with exact reverse-mode gradients, and the Adam optimizer.
//!
//! Everything learnable in this crate (solo policy, gating selector, action
//! editor, critics, baseline actors) is one of these MLPs; parameters and
//! gradients are always 64-bit.

pub mod adam;
pub mod fd;
pub mod linalg;
pub mod mlp;
pub mod tensor;

pub use adam::{adam_step, AdamState};
pub use fd::finite_diff_grad;
pub use mlp::{ForwardCache, Mlp, MlpGrads, OutputActivation};
pub use tensor::Tensor;
