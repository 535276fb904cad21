//! Return `G` and the regularized return `G_reg = G - alpha * sum_tau penalty(x_tau)`.

use ndarray::{s, Array2};

use super::plan::Plan;
use crate::autodiff::{Tape, Var};
use crate::envs::Environment;
use crate::models::{Denoiser, DynamicsModel, GaussianRegularizer};
use crate::{Error, Result};

/// Anything that can be rolled forward on a tape from a planning state.
pub trait Dynamics: Send + Sync {
    /// Planning state for a real environment state and its observation.
    fn initial_state(&self, env_state: &[f64], obs: &[f64]) -> Vec<f64>;

    /// Observations `o_0..o_n` for `n` actions, each `B x action_dim`.
    ///
    /// No finiteness checks: batched callers score diverged rows instead.
    fn rollout(&self, tape: &mut Tape, s0: Var, actions: &[Var]) -> Result<Vec<Var>>;
}

impl Dynamics for DynamicsModel {
    fn initial_state(&self, _env_state: &[f64], obs: &[f64]) -> Vec<f64> {
        obs.to_vec()
    }

    fn rollout(&self, tape: &mut Tape, s0: Var, actions: &[Var]) -> Result<Vec<Var>> {
        let net = self.bind(tape, false);
        let mut states = Vec::with_capacity(actions.len() + 1);
        states.push(s0);
        for (k, &a) in actions.iter().enumerate() {
            let next = self.predict_mean_bound(tape, &net, states[k], a)?;
            states.push(next);
        }
        Ok(states)
    }
}

/// The true environment used as its own model.
pub struct OracleDynamics<'a>(pub &'a dyn Environment);

impl Dynamics for OracleDynamics<'_> {
    fn initial_state(&self, env_state: &[f64], _obs: &[f64]) -> Vec<f64> {
        env_state.to_vec()
    }

    fn rollout(&self, tape: &mut Tape, s0: Var, actions: &[Var]) -> Result<Vec<Var>> {
        let mut state = s0;
        let mut obs = Vec::with_capacity(actions.len() + 1);
        obs.push(self.0.observe_on_tape(tape, state)?);
        for &a in actions {
            state = self.0.step_on_tape(tape, state, a)?;
            obs.push(self.0.observe_on_tape(tape, state)?);
        }
        Ok(obs)
    }
}

#[derive(Debug, Clone, Copy)]
pub enum Regularizer<'a> {
    None,
    Dae(&'a Denoiser),
    Gaussian(&'a GaussianRegularizer),
}

impl Regularizer<'_> {
    pub fn window(&self) -> usize {
        match self {
            Regularizer::None => 1,
            Regularizer::Dae(d) => d.window(),
            Regularizer::Gaussian(g) => g.window,
        }
    }

    fn input_dim(&self) -> Option<usize> {
        match self {
            Regularizer::None => None,
            Regularizer::Dae(d) => Some(d.dim()),
            Regularizer::Gaussian(g) => Some(g.dim()),
        }
    }

    /// Per-row penalty of `B x window_dim` rows, `B x 1`.
    pub fn penalty(&self, tape: &mut Tape, x: Var, stop_gradient: bool) -> Result<Option<Var>> {
        match self {
            Regularizer::None => Ok(None),
            Regularizer::Dae(d) => d.penalty(tape, x, stop_gradient).map(Some),
            Regularizer::Gaussian(g) => g.penalty_on_tape(tape, x).map(Some),
        }
    }
}

/// What a planner maximizes.
#[derive(Clone, Copy)]
pub struct ObjectiveSpec<'a> {
    pub dynamics: &'a dyn Dynamics,
    /// Supplies the known reward `r(o, a)`.
    pub env: &'a dyn Environment,
    pub regularizer: Regularizer<'a>,
    pub alpha: f64,
    /// Treat the denoiser output as a constant in the penalty gradient.
    pub stop_gradient: bool,
}

/// Tape nodes of one batched rollout. Every per-row quantity is `B x 1`.
#[derive(Debug, Clone)]
pub struct Rollout {
    pub observations: Vec<Var>,
    pub rewards: Vec<Var>,
    /// One entry per complete window, `tau = 0..=L - w`.
    pub penalties: Vec<Var>,
    pub ret: Var,
    pub objective: Var,
}

impl<'a> ObjectiveSpec<'a> {
    pub fn new(dynamics: &'a dyn Dynamics, env: &'a dyn Environment) -> Self {
        Self {
            dynamics,
            env,
            regularizer: Regularizer::None,
            alpha: 0.0,
            stop_gradient: false,
        }
    }

    pub fn with_regularizer(mut self, regularizer: Regularizer<'a>, alpha: f64) -> Self {
        self.regularizer = regularizer;
        self.alpha = alpha;
        self
    }

    pub fn window(&self) -> usize {
        self.regularizer.window()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0) || !self.alpha.is_finite() {
            return Err(Error::config("planner.alpha", "must be finite and non-negative"));
        }
        if let Some(dim) = self.regularizer.input_dim() {
            let pair = self.env.obs_dim() + self.env.action_dim();
            if dim != self.window() * pair {
                return Err(Error::shape(format!(
                    "regularizer takes {dim} inputs but windows of {} (o, a) pairs have {}",
                    self.window(),
                    self.window() * pair
                )));
            }
        }
        Ok(())
    }

    /// Rolls `actions` (each `B x action_dim`) forward from the planning state
    /// `s0`, shared by every row.
    pub fn build(&self, tape: &mut Tape, s0: &[f64], actions: &[Var]) -> Result<Rollout> {
        self.validate()?;
        let n = actions.len();
        if n == 0 {
            return Err(Error::shape("a plan needs at least one action"));
        }
        let (rows, _) = tape.shape(actions[0]);
        let start = tape.constant_row(s0);
        let start = if rows == 1 {
            start
        } else {
            tape.broadcast_rows(start, rows)?
        };
        let observations = self.dynamics.rollout(tape, start, &actions[..n - 1])?;

        let mut rewards = Vec::with_capacity(n);
        for (&o, &a) in observations.iter().zip(actions) {
            rewards.push(self.env.reward_on_tape(tape, o, a)?);
        }
        let mut ret = rewards[0];
        for &r in &rewards[1..] {
            ret = tape.add(ret, r)?;
        }

        let mut penalties = Vec::new();
        let mut objective = ret;
        if self.alpha != 0.0 && !matches!(self.regularizer, Regularizer::None) {
            let w = self.window();
            if n >= w {
                for tau in 0..=n - w {
                    let parts: Vec<Var> = (tau..tau + w).flat_map(|k| [observations[k], actions[k]]).collect();
                    let x = tape.concat_cols(&parts)?;
                    penalties.extend(self.regularizer.penalty(tape, x, self.stop_gradient)?);
                }
            }
            if let Some((&first, rest)) = penalties.split_first() {
                let mut total = first;
                for &p in rest {
                    total = tape.add(total, p)?;
                }
                let weighted = tape.scale(total, -self.alpha);
                objective = tape.add(ret, weighted)?;
            }
        }
        Ok(Rollout {
            observations,
            rewards,
            penalties,
            ret,
            objective,
        })
    }

    /// Same as [`Self::build`] for one plan, with divergence reported by step.
    fn build_plan(&self, tape: &mut Tape, s0: &[f64], plan: &Plan) -> Result<Rollout> {
        let d = self.env.action_dim();
        if plan.action_dim() != d {
            return Err(Error::shape(format!(
                "plan has {} action dims, env has {d}",
                plan.action_dim()
            )));
        }
        let actions: Vec<Var> = (0..plan.len())
            .map(|k| tape.constant_row(plan.action(k).as_slice().expect("row")))
            .collect();
        let roll = self.build(tape, s0, &actions)?;
        if let Some(k) = roll
            .observations
            .iter()
            .position(|&o| !tape.value(o).iter().all(|v| v.is_finite()))
        {
            return Err(Error::Diverged { step: k });
        }
        Ok(roll)
    }

    /// Row values of `objective` for a population of flattened plans
    /// (`N x (len * action_dim)`). Non-finite rows score `-inf`.
    ///
    /// Rows are split across `workers` threads, one tape each; the result
    /// does not depend on the split.
    pub fn score_population(
        &self,
        s0: &[f64],
        population: &Array2<f64>,
        len: usize,
        workers: usize,
    ) -> Result<Vec<f64>> {
        let d = self.env.action_dim();
        if population.ncols() != len * d {
            return Err(Error::shape(format!(
                "population rows have {} entries, expected {len} x {d}",
                population.ncols()
            )));
        }
        let score_chunk = |rows: ndarray::ArrayView2<f64>| -> Result<Vec<f64>> {
            let mut tape = Tape::new();
            let actions: Vec<Var> = (0..len)
                .map(|k| tape.constant(rows.slice(s![.., k * d..(k + 1) * d]).to_owned()))
                .collect();
            let roll = self.build(&mut tape, s0, &actions)?;
            Ok(tape
                .value(roll.objective)
                .iter()
                .map(|&v| if v.is_finite() { v } else { f64::NEG_INFINITY })
                .collect())
        };
        let n = population.nrows();
        let workers = workers.clamp(1, n.max(1));
        if workers == 1 {
            return score_chunk(population.view());
        }
        let chunk = n.div_ceil(workers);
        let results: Vec<Result<Vec<f64>>> = std::thread::scope(|scope| {
            let handles: Vec<_> = (0..n)
                .step_by(chunk)
                .map(|start| {
                    let view = population.slice(s![start..(start + chunk).min(n), ..]);
                    let f = &score_chunk;
                    scope.spawn(move || f(view))
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("scoring worker panicked"))
                .collect()
        });
        let mut out = Vec::with_capacity(n);
        for r in results {
            out.extend(r?);
        }
        Ok(out)
    }
}

/// `G = sum_k r(o_k, a_k)` over the mean rollout, as a `1 x 1` node.
pub fn expected_return(spec: &ObjectiveSpec, s0: &[f64], plan: &Plan, tape: &mut Tape) -> Result<Var> {
    Ok(spec.build_plan(tape, s0, plan)?.ret)
}

/// `G_reg`; identical to `G` (same node) when `alpha == 0`.
pub fn regularized_return(spec: &ObjectiveSpec, s0: &[f64], plan: &Plan, tape: &mut Tape) -> Result<Var> {
    Ok(spec.build_plan(tape, s0, plan)?.objective)
}

/// Plain-number summary of one plan under a spec.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanValue {
    pub ret: f64,
    pub objective: f64,
    pub rewards: Vec<f64>,
    pub penalties: Vec<f64>,
}

pub fn evaluate_plan(spec: &ObjectiveSpec, s0: &[f64], plan: &Plan) -> Result<PlanValue> {
    let mut tape = Tape::new();
    let roll = spec.build_plan(&mut tape, s0, plan)?;
    Ok(PlanValue {
        ret: tape.scalar(roll.ret),
        objective: tape.scalar(roll.objective),
        rewards: roll.rewards.iter().map(|&r| tape.scalar(r)).collect(),
        penalties: roll.penalties.iter().map(|&p| tape.scalar(p)).collect(),
    })
}

/// Worker count for batched scoring, from `REGPLAN_WORKERS` (default 1).
pub fn workers_from_env() -> usize {
    std::env::var("REGPLAN_WORKERS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n >= 1)
        .unwrap_or(1)
}
