//! Learned components: dynamics model, denoiser and the Gaussian baseline.

mod denoiser;
mod dynamics;
mod gaussian;
mod normalize;

pub use denoiser::{dae_penalty, train_dae, train_dae_on_windows, DaeConfig, Denoiser};
pub use dynamics::{train_dynamics, BoundDynamics, DynamicsConfig, DynamicsModel};
pub use gaussian::{fit_gaussian, fit_gaussian_rows, GaussianRegularizer, VARIANCE_FLOOR};
pub use normalize::Normalizer;
