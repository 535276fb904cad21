//! Model-based reinforcement learning with denoising-autoencoder-regularized
//! trajectory optimization.
//!
//! The crate is organized bottom-up:
//!
//! * [`autodiff`]: a small reverse-mode tape, dense networks and Adam.
//! * [`envs`]: analytic environments with differentiable rewards.
//! * [`models`]: the probabilistic dynamics model, the denoising autoencoder
//!   and a diagonal Gaussian baseline regularizer.
//! * [`planning`]: return objectives, CEM and gradient-based planners.
//! * [`control`]: closed-loop MPC and open-loop imagination/reality diagnostics.
//! * [`mbrl`]: replay storage, the end-to-end training loop and persistence.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod control;
pub mod envs;
mod error;
pub mod mbrl;
pub mod models;
pub mod planning;

pub use error::{Error, Result};

pub mod rng {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    pub type Rng = ChaCha8Rng;

    /// Seeded generator; `stream` separates independent consumers of one seed.
    pub fn seeded(seed: u64, stream: u64) -> Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        rng
    }
}
