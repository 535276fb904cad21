//! Replay storage, configuration, persistence and the end-to-end training loop.

mod buffer;
mod config;
mod persist;
pub mod presets;
mod run;
mod study;

pub use buffer::{sample_batches, sample_window_batches, BatchSampler, Episode, ReplayBuffer, Transitions};
pub use config::{RegularizerKind, RunConfig};
pub use persist::{decode_denoiser, decode_dynamics, encode_denoiser, encode_dynamics};
pub use run::{
    collect_random_episode, derive_seed, failed_stage, run_training, run_training_with, EpisodeMetrics, RunOutput,
};
pub use study::{gap_study, GapCell, GapRow, GapStudy};
