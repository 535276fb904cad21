use log::warn;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::envs::{is_finite, Environment};
use crate::mbrl::Episode;
use crate::planning::{
    adam_optimize, cem_optimize, evaluate_plan, warm_start_shift, workers_from_env, CemConfig, Dynamics,
    GradPlanConfig, ObjectiveSpec, Plan, Regularizer, ShiftFill, WarmStart,
};
use crate::rng::{seeded, Rng};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PlannerKind {
    Cem,
    Adam,
    CemThenAdam,
}

impl std::str::FromStr for PlannerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cem" => Ok(Self::Cem),
            "adam" => Ok(Self::Adam),
            "cem-then-adam" => Ok(Self::CemThenAdam),
            other => Err(Error::config(
                "planner.kind",
                format!("expected cem, adam or cem-then-adam, got `{other}`"),
            )),
        }
    }
}

impl std::fmt::Display for PlannerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Cem => "cem",
            Self::Adam => "adam",
            Self::CemThenAdam => "cem-then-adam",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MpcConfig {
    pub planner: PlannerKind,
    /// Plans hold `horizon + 1` actions.
    pub horizon: usize,
    pub cem: CemConfig,
    pub adam: GradPlanConfig,
    pub alpha: f64,
    pub stop_gradient: bool,
    /// Reuse the previous step's shifted solution (otherwise cold start).
    pub warm_start: bool,
    pub shift_fill: ShiftFill,
    /// Std of Gaussian noise added to the executed action.
    pub noise_std: f64,
}

impl Default for MpcConfig {
    fn default() -> Self {
        Self {
            planner: PlannerKind::Cem,
            horizon: 25,
            cem: CemConfig::default(),
            adam: GradPlanConfig::default(),
            alpha: 0.0,
            stop_gradient: false,
            warm_start: true,
            shift_fill: ShiftFill::RepeatLast,
            noise_std: 0.0,
        }
    }
}

impl MpcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::config("mpc.horizon", "must be at least 1"));
        }
        if !(self.noise_std >= 0.0) {
            return Err(Error::config("mpc.noise_std", "must be non-negative"));
        }
        if !(self.alpha >= 0.0) || !self.alpha.is_finite() {
            return Err(Error::config("planner.alpha", "must be finite and non-negative"));
        }
        match self.planner {
            PlannerKind::Cem => self.cem.validate(),
            PlannerKind::Adam => self.adam.validate(),
            PlannerKind::CemThenAdam => {
                self.cem.validate()?;
                self.adam.validate()
            }
        }
    }
}

/// Plans from `init` with the configured planner.
///
/// `cold` marks a start without a previous solution; cold starts use the
/// configured number of gradient restarts, warm ones a single restart.
pub fn plan_once(
    spec: &ObjectiveSpec,
    s0: &[f64],
    init: &Plan,
    cfg: &MpcConfig,
    cold: bool,
    seed: u64,
) -> Result<Plan> {
    let len = init.len();
    let workers = workers_from_env();
    let score = |pop: &ndarray::Array2<f64>| spec.score_population(s0, pop, len, workers);
    match cfg.planner {
        PlannerKind::Cem => cem_optimize(score, init, &cfg.cem, seed),
        PlannerKind::Adam => {
            let mut adam = cfg.adam.clone();
            if !cold && adam.warm_start == WarmStart::ShiftPrevious {
                adam.restarts = 1;
            }
            adam_optimize(spec, s0, init, &adam, seed)
        }
        PlannerKind::CemThenAdam => {
            let refined = cem_optimize(score, init, &cfg.cem, seed)?;
            let adam = GradPlanConfig {
                restarts: 1,
                warm_start: WarmStart::ShiftPrevious,
                ..cfg.adam.clone()
            };
            adam_optimize(spec, s0, &refined, &adam, seed ^ 1)
        }
    }
}

/// One closed-loop episode plus what the planner believed along the way.
#[derive(Debug, Clone)]
pub struct MpcTrace {
    pub episode: Episode,
    pub initial_state: Vec<f64>,
    /// Plan chosen at the first step.
    pub first_plan: Option<Plan>,
    /// Model return `G` of the chosen plan at each step.
    pub imagined: Vec<f64>,
    /// Mean regularizer penalty per window of the chosen plan at each step.
    pub penalties: Vec<f64>,
}

fn step_seed(seed: u64, t: usize, attempt: u64) -> u64 {
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15)
        .wrapping_add((t as u64) << 8)
        .wrapping_add(attempt)
}

/// Runs model-predictive control for one episode: plan, execute the first
/// action (plus exploration noise, clipped), shift, repeat.
///
/// A rejected plan is retried once from a cold start; if that also fails, the
/// zero action (clipped into the bounds) is executed and counted in
/// `planner_fallbacks`. A non-finite environment state ends the episode with
/// `truncated` and `diverged` set.
pub fn mpc_episode(
    env: &dyn Environment,
    dynamics: &dyn Dynamics,
    regularizer: Regularizer,
    cfg: &MpcConfig,
    seed: u64,
) -> Result<MpcTrace> {
    cfg.validate()?;
    let mut rng = seeded(seed, 0x656e76);
    let state0 = env.reset(&mut rng);
    mpc_from_state(env, dynamics, regularizer, cfg, state0, seed)
}

/// [`mpc_episode`] from a given initial environment state.
pub fn mpc_from_state(
    env: &dyn Environment,
    dynamics: &dyn Dynamics,
    regularizer: Regularizer,
    cfg: &MpcConfig,
    state0: Vec<f64>,
    seed: u64,
) -> Result<MpcTrace> {
    cfg.validate()?;
    let bounds = env.action_bounds().clone();
    let spec = ObjectiveSpec {
        dynamics,
        env,
        regularizer,
        alpha: cfg.alpha,
        stop_gradient: cfg.stop_gradient,
    };
    spec.validate()?;
    let len = cfg.horizon + 1;
    let mut noise_rng = seeded(seed, 0x6e6f6973);
    let mut shift_rng: Rng = seeded(seed, 0x73686966);
    let noise = Normal::new(0.0, cfg.noise_std).map_err(|e| Error::config("mpc.noise_std", e.to_string()))?;

    let mut state = state0.clone();
    let mut obs = env.observe(&state);
    let mut episode = Episode::new(obs.clone());
    let mut previous: Option<Plan> = None;
    let mut trace = MpcTrace {
        episode: Episode::new(obs.clone()),
        initial_state: state0,
        first_plan: None,
        imagined: Vec::new(),
        penalties: Vec::new(),
    };

    for t in 0..env.episode_len() {
        let s0 = dynamics.initial_state(&state, &obs);
        let (init, cold) = match (&previous, cfg.warm_start) {
            (Some(p), true) => (warm_start_shift(p, cfg.shift_fill, &mut shift_rng), false),
            _ => (Plan::midpoint(len, &bounds)?, true),
        };
        let planned = plan_once(&spec, &s0, &init, cfg, cold, step_seed(seed, t, 0)).or_else(|first| {
            warn!("step {t}: planner rejected ({first}); retrying from a cold start");
            let cold_init = Plan::midpoint(len, &bounds)?;
            plan_once(&spec, &s0, &cold_init, cfg, true, step_seed(seed, t, 1))
        });
        let mut action = match planned {
            Ok(plan) => {
                // Unit weight so the penalty is reported even when alpha is 0.
                let probe = ObjectiveSpec { alpha: 1.0, ..spec };
                if let Ok(v) = evaluate_plan(&probe, &s0, &plan) {
                    trace.imagined.push(v.ret);
                    if !v.penalties.is_empty() {
                        trace
                            .penalties
                            .push(v.penalties.iter().sum::<f64>() / v.penalties.len() as f64);
                    }
                }
                let a = plan.first();
                if t == 0 {
                    trace.first_plan = Some(plan.clone());
                }
                previous = Some(plan);
                a
            }
            Err(e) => {
                warn!("step {t}: planner failed again ({e}); executing the zero action");
                episode.planner_fallbacks += 1;
                previous = None;
                vec![0.0; bounds.dim()]
            }
        };
        if cfg.noise_std > 0.0 {
            for a in action.iter_mut() {
                *a += noise.sample(&mut noise_rng);
            }
        }
        bounds.clip_in_place(&mut action);

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
    trace.episode = episode;
    Ok(trace)
}
