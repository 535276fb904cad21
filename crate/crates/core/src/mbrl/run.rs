//! The end-to-end loop: seed with random episodes, then repeatedly retrain
//! the models on everything collected and run one MPC episode.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::info;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::buffer::{Episode, ReplayBuffer};
use super::config::{RegularizerKind, RunConfig};
use super::persist::{encode_denoiser, encode_dynamics};
use crate::control::{mpc_episode, open_loop_eval, MpcTrace};
use crate::envs::{is_finite, make_env, Environment};
use crate::models::{
    fit_gaussian, train_dae, train_dynamics, DaeConfig, Denoiser, DynamicsConfig, DynamicsModel, GaussianRegularizer,
};
use crate::planning::Regularizer;
use crate::rng::seeded;
use crate::{Error, Result};

/// Uniformly random actions for one full episode. A non-finite state ends
/// the episode early with `truncated` and `diverged` set.
pub fn collect_random_episode(env: &dyn Environment, seed: u64) -> Episode {
    let mut rng = seeded(seed, 0x72616e64);
    let bounds = env.action_bounds().clone();
    let mut state = env.reset(&mut rng);
    let mut obs = env.observe(&state);
    let mut episode = Episode::new(obs.clone());
    for _ in 0..env.episode_len() {
        let action: Vec<f64> = (0..bounds.dim())
            .map(|j| {
                if bounds.range(j) > 0.0 {
                    rng.random_range(bounds.low[j]..=bounds.high[j])
                } else {
                    bounds.low[j]
                }
            })
            .collect();
        let reward = env.reward(&obs, &action);
        let next = env.step(&state, &action);
        if !is_finite(&next) || !reward.is_finite() {
            episode.truncated = true;
            episode.diverged = true;
            break;
        }
        let next_obs = env.observe(&next);
        episode.push(action, reward, next_obs.clone());
        state = next;
        obs = next_obs;
    }
    episode
}

/// One metrics record per episode. Fields that do not apply to the random
/// seeding episodes are `null`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    pub episode: usize,
    #[serde(rename = "return")]
    pub ret: f64,
    /// Model return of the plan chosen at the first step.
    pub imagined_return: Option<f64>,
    /// Imagined minus realized return of that plan executed open loop.
    pub gap: Option<f64>,
    /// Mean per-window penalty of the chosen plans over the episode.
    pub mean_dae_penalty: Option<f64>,
    /// NLL of the model used for planning on the episode it produced.
    pub model_val_nll: Option<f64>,
    pub wall_time_s: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub metrics: Vec<EpisodeMetrics>,
    pub buffer: ReplayBuffer,
    pub dynamics: Option<DynamicsModel>,
    pub denoiser: Option<Denoiser>,
}

impl RunOutput {
    /// Per-episode returns, random seeding episodes first.
    pub fn learning_curve(&self) -> Vec<f64> {
        self.metrics.iter().map(|m| m.ret).collect()
    }
}

/// Independent per-purpose seeds from one run seed.
pub fn derive_seed(seed: u64, purpose: u64, index: u64) -> u64 {
    // splitmix64 finalizer over a mixed input
    let mut z = seed
        .wrapping_add(purpose.wrapping_mul(0x9e37_79b9_7f4a_7c15))
        .wrapping_add(index.wrapping_mul(0xbf58_476d_1ce4_e5b9))
        .wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub(super) const SEED_RANDOM: u64 = 1;
pub(super) const SEED_MODEL: u64 = 2;
pub(super) const SEED_DAE: u64 = 3;
pub(super) const SEED_MPC: u64 = 4;

struct Artifacts {
    dir: PathBuf,
}

impl Artifacts {
    fn create(dir: &Path, cfg: &RunConfig) -> Result<Self> {
        fs::create_dir_all(dir)?;
        let a = Self { dir: dir.to_path_buf() };
        a.write_run_json(cfg, "running")?;
        fs::write(dir.join("metrics.jsonl"), "")?;
        Ok(a)
    }

    fn write_atomic(&self, name: &str, bytes: &[u8]) -> Result<()> {
        let tmp = self.dir.join(format!(".{name}.tmp"));
        fs::write(&tmp, bytes)?;
        fs::rename(&tmp, self.dir.join(name))?;
        Ok(())
    }

    fn write_run_json(&self, cfg: &RunConfig, status: &str) -> Result<()> {
        let doc = serde_json::json!({
            "format_version": 1,
            "package_version": env!("CARGO_PKG_VERSION"),
            "status": status,
            "config": cfg,
        });
        self.write_atomic("run.json", serde_json::to_string_pretty(&doc)?.as_bytes())
    }

    fn append_metrics(&self, m: &EpisodeMetrics) -> Result<()> {
        let mut f = fs::OpenOptions::new()
            .append(true)
            .open(self.dir.join("metrics.jsonl"))?;
        writeln!(f, "{}", serde_json::to_string(m)?)?;
        Ok(())
    }

    fn snapshot(&self, buffer: &ReplayBuffer, dynamics: Option<&DynamicsModel>, dae: Option<&Denoiser>) -> Result<()> {
        self.write_atomic("buffer.jsonl", buffer.to_jsonl()?.as_bytes())?;
        if let Some(m) = dynamics {
            self.write_atomic("dynamics.bin", &encode_dynamics(m))?;
        }
        if let Some(d) = dae {
            self.write_atomic("dae.bin", &encode_denoiser(d))?;
        }
        Ok(())
    }
}

/// Runs the training loop, persisting artifacts to `out` when given.
pub fn run_training(cfg: &RunConfig, out: Option<&Path>) -> Result<RunOutput> {
    run_training_with(cfg, out, |_, _| true)
}

/// As [`run_training`], calling `observer` after every episode; returning
/// `false` stops the run early (artifacts are still finalized).
pub fn run_training_with<F>(cfg: &RunConfig, out: Option<&Path>, mut observer: F) -> Result<RunOutput>
where
    F: FnMut(&EpisodeMetrics, &Episode) -> bool,
{
    cfg.validate()?;
    let env = make_env(&cfg.env_id)?;
    let artifacts = out.map(|dir| Artifacts::create(dir, cfg)).transpose()?;
    let mut state = LoopState {
        metrics: Vec::new(),
        buffer: ReplayBuffer::new(),
        dynamics: None,
        denoiser: None,
    };
    let result = training_loop(cfg, env.as_ref(), artifacts.as_ref(), &mut state, &mut observer);
    if let Some(a) = &artifacts {
        let status = if result.is_ok() { "complete" } else { "failed" };
        let finalize = a
            .snapshot(&state.buffer, state.dynamics.as_ref(), state.denoiser.as_ref())
            .and_then(|_| a.write_run_json(cfg, status))
            .map_err(|e| e.at_stage("persist"));
        // The original failure wins over a failed final write.
        result?;
        finalize?;
    } else {
        result?;
    }
    Ok(RunOutput {
        metrics: state.metrics,
        buffer: state.buffer,
        dynamics: state.dynamics,
        denoiser: state.denoiser,
    })
}

struct LoopState {
    metrics: Vec<EpisodeMetrics>,
    buffer: ReplayBuffer,
    dynamics: Option<DynamicsModel>,
    denoiser: Option<Denoiser>,
}

fn training_loop<F>(
    cfg: &RunConfig,
    env: &dyn Environment,
    artifacts: Option<&Artifacts>,
    st: &mut LoopState,
    observer: &mut F,
) -> Result<()>
where
    F: FnMut(&EpisodeMetrics, &Episode) -> bool,
{
    for k in 0..cfg.episodes {
        let started = Instant::now();
        let (episode, mut metrics) = if k < cfg.random_episodes {
            let e = collect_random_episode(env, derive_seed(cfg.seed, SEED_RANDOM, k as u64));
            let m = EpisodeMetrics {
                episode: k,
                ret: e.total_return(),
                imagined_return: None,
                gap: None,
                mean_dae_penalty: None,
                model_val_nll: None,
                wall_time_s: None,
            };
            (e, m)
        } else {
            planned_episode(cfg, env, st, k)?
        };
        if cfg.record_wall_time {
            metrics.wall_time_s = Some(started.elapsed().as_secs_f64());
        }
        info!(
            "{} seed {} episode {k}: return {:.3}{}",
            cfg.env_id,
            cfg.seed,
            metrics.ret,
            metrics.gap.map(|g| format!(", gap {g:.3}")).unwrap_or_default()
        );
        st.buffer.push(episode.clone()).map_err(|e| e.at_stage("collect"))?;
        if let Some(a) = artifacts {
            a.append_metrics(&metrics).map_err(|e| e.at_stage("persist"))?;
            a.snapshot(&st.buffer, st.dynamics.as_ref(), st.denoiser.as_ref())
                .map_err(|e| e.at_stage("persist"))?;
        }
        let go_on = observer(&metrics, &episode);
        st.metrics.push(metrics);
        if !go_on {
            break;
        }
    }
    Ok(())
}

fn planned_episode(
    cfg: &RunConfig,
    env: &dyn Environment,
    st: &mut LoopState,
    k: usize,
) -> Result<(Episode, EpisodeMetrics)> {
    let model_cfg = DynamicsConfig {
        seed: derive_seed(cfg.seed, SEED_MODEL, k as u64),
        ..cfg.model.clone()
    };
    let warm = if cfg.model_warm_start {
        st.dynamics.as_ref()
    } else {
        None
    };
    let model = train_dynamics(&st.buffer, &model_cfg, warm).map_err(|e| e.at_stage("train-dynamics"))?;
    st.dynamics = Some(model);

    let mut gaussian: Option<GaussianRegularizer> = None;
    match cfg.regularizer {
        RegularizerKind::Dae => {
            let dae_cfg = DaeConfig {
                seed: derive_seed(cfg.seed, SEED_DAE, k as u64),
                ..cfg.dae.clone()
            };
            st.denoiser = Some(train_dae(&st.buffer, &dae_cfg).map_err(|e| e.at_stage("train-dae"))?);
        }
        RegularizerKind::Gaussian => {
            gaussian = Some(fit_gaussian(&st.buffer, cfg.dae.window).map_err(|e| e.at_stage("train-dae"))?);
        }
        RegularizerKind::None => {}
    }
    let model = st.dynamics.as_ref().expect("just trained");
    let reg = match (&cfg.regularizer, &st.denoiser, &gaussian) {
        (RegularizerKind::Dae, Some(d), _) => Regularizer::Dae(d),
        (RegularizerKind::Gaussian, _, Some(g)) => Regularizer::Gaussian(g),
        _ => Regularizer::None,
    };

    let seed = derive_seed(cfg.seed, SEED_MPC, k as u64);
    let trace: MpcTrace = mpc_episode(env, model, reg, &cfg.mpc, seed).map_err(|e| e.at_stage("mpc"))?;
    let episode = trace.episode.clone();

    let gap_report = match &trace.first_plan {
        Some(p) => Some(open_loop_eval(env, model, reg, p, &trace.initial_state).map_err(|e| e.at_stage("mpc"))?),
        None => None,
    };
    let model_val_nll = if episode.is_empty() {
        None
    } else {
        let mut held_out = ReplayBuffer::new();
        held_out.push(episode.clone()).map_err(|e| e.at_stage("collect"))?;
        let nll = model
            .nll(&held_out.transitions()?)
            .map_err(|e| e.at_stage("train-dynamics"))?;
        Some(nll).filter(|v| v.is_finite())
    };
    let mean_penalty =
        (!trace.penalties.is_empty()).then(|| trace.penalties.iter().sum::<f64>() / trace.penalties.len() as f64);
    let metrics = EpisodeMetrics {
        episode: k,
        ret: episode.total_return(),
        imagined_return: gap_report.as_ref().map(|g| g.imagined_return()),
        gap: gap_report.as_ref().map(|g| g.gap),
        mean_dae_penalty: mean_penalty,
        model_val_nll,
        wall_time_s: None,
    };
    if episode.planner_fallbacks > 0 {
        log::warn!("episode {k}: {} planner fallbacks", episode.planner_fallbacks);
    }
    Ok((episode, metrics))
}

/// Errors from a failed run carry the stage that failed.
pub fn failed_stage(err: &Error) -> Option<&'static str> {
    match err {
        Error::Stage { stage, .. } => Some(stage),
        _ => None,
    }
}
