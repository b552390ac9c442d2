//! Solo-to-collaborative transfer lab.
//!
//! The crate covers the full pipeline on a native cooperative particle world:
//!
//! 1. [`envs`] — the Spread coverage task and its single-agent navigation
//!    counterpart, with a shared/local reward decomposition.
//! 2. [`demos`] — solo expert rollout collection and behavior cloning of a
//!    frozen shared solo policy.
//! 3. [`decomp`] — rule-based slicing of a cooperative observation into
//!    solo-compatible views.
//! 4. [`fusion`] — candidate-action gating (straight-through Gumbel-Softmax)
//!    plus a bounded residual action editor and clip operators.
//! 5. [`marl`] — twin-critic deterministic-policy-gradient training (delayed
//!    actor updates, target smoothing, n-step replay); the single-agent case
//!    of the same machinery trains the solo expert.
//! 6. [`numerics`] — the dense-tensor / MLP / Adam substrate everything above
//!    runs on, with exact reverse-mode gradients.
//! 7. [`cli`] — configuration, checkpoints, metrics, and the command front end.

pub mod cli;
pub mod decomp;
pub mod demos;
pub mod envs;
pub mod error;
pub mod fusion;
pub mod marl;
pub mod numerics;

pub use error::{Result, SocoError};
