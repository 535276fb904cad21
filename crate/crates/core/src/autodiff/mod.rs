//! Reverse-mode automatic differentiation.
//!
//! A [`Tape`] is rebuilt for every forward pass. Networks are bound onto it
//! either as trainable leaves (model fitting) or as constants (planning, where
//! only the actions receive gradients).

mod adam;
mod gradcheck;
mod mlp;
mod tape;

pub use adam::{adam_step, AdamState};
pub use gradcheck::{finite_diff_grad, max_relative_error, relative_error, REL_ERR_FLOOR};
pub use mlp::{mlp_forward, Activation, BoundMlp, Dense, MlpParams};
pub use tape::{Gradients, Tape, Var};
