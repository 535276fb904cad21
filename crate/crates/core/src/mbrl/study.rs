//! Open-loop imagination/reality study: fit models on a fixed amount of
//! random data, plan once from a reset state with each optimizer, with and
//! without the regularizer, and execute the plan for real.

use serde::{Deserialize, Serialize};

use super::buffer::ReplayBuffer;
use super::config::{RegularizerKind, RunConfig};
use super::run::{collect_random_episode, derive_seed, SEED_DAE, SEED_MODEL, SEED_RANDOM};
use crate::control::{open_loop_eval, plan_once, MpcConfig, PlannerKind};
use crate::envs::make_env;
use crate::models::{fit_gaussian, train_dae, train_dynamics, DaeConfig, DynamicsConfig};
use crate::planning::{Dynamics, ObjectiveSpec, OracleDynamics, Plan, Regularizer};
use crate::rng::seeded;
use crate::{Error, Result};

const SEED_PLAN: u64 = 5;

/// One optimizer with or without the regularizer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GapCell {
    pub planner: PlannerKind,
    pub regularized: bool,
}

impl GapCell {
    /// The four optimizer x regularizer cells, or the two of one optimizer.
    pub fn grid(only: Option<PlannerKind>) -> Vec<GapCell> {
        [PlannerKind::Cem, PlannerKind::Adam]
            .into_iter()
            .filter(|p| only.is_none_or(|o| o == *p))
            .flat_map(|planner| [false, true].map(|regularized| GapCell { planner, regularized }))
            .collect()
    }

    pub fn name(&self, kind: RegularizerKind) -> String {
        let reg = match kind {
            RegularizerKind::Gaussian => "gaussian",
            _ => "dae",
        };
        if self.regularized {
            format!("{}+{reg}", self.planner)
        } else {
            self.planner.to_string()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapRow {
    pub cell: String,
    pub seed: u64,
    pub alpha: f64,
    pub imagined: f64,
    pub realized: f64,
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GapStudy {
    pub episodes_of_data: usize,
    /// Regularizer weight of the regularized cells; the others use 0.
    pub alpha: f64,
    pub cells: Vec<GapCell>,
    /// Plan with the true dynamics instead of a learned model.
    pub oracle: bool,
}

/// Runs `study` for one seed. Model, regularizer and start state depend on
/// the seed only, so regularized and unregularized cells differ in the
/// penalty term alone.
pub fn gap_study(cfg: &RunConfig, study: &GapStudy, seed: u64) -> Result<Vec<GapRow>> {
    cfg.validate()?;
    if study.episodes_of_data == 0 {
        return Err(Error::config("episodes_of_data", "need at least one episode of data"));
    }
    if !(study.alpha >= 0.0) || !study.alpha.is_finite() {
        return Err(Error::config("planner.alpha", "must be finite and non-negative"));
    }
    let env = make_env(&cfg.env_id)?;
    let env = env.as_ref();
    let mut buffer = ReplayBuffer::new();
    for k in 0..study.episodes_of_data {
        buffer.push(collect_random_episode(env, derive_seed(seed, SEED_RANDOM, k as u64)))?;
    }

    let model_cfg = DynamicsConfig {
        seed: derive_seed(seed, SEED_MODEL, 0),
        ..cfg.model.clone()
    };
    let model = train_dynamics(&buffer, &model_cfg, None).map_err(|e| e.at_stage("train-dynamics"))?;
    let dae_cfg = DaeConfig {
        seed: derive_seed(seed, SEED_DAE, 0),
        ..cfg.dae.clone()
    };
    let (dae, gaussian) = match cfg.regularizer {
        RegularizerKind::Gaussian => (
            None,
            Some(fit_gaussian(&buffer, cfg.dae.window).map_err(|e| e.at_stage("train-dae"))?),
        ),
        _ => (
            Some(train_dae(&buffer, &dae_cfg).map_err(|e| e.at_stage("train-dae"))?),
            None,
        ),
    };
    let reg = match (&dae, &gaussian) {
        (Some(d), _) => Regularizer::Dae(d),
        (_, Some(g)) => Regularizer::Gaussian(g),
        _ => Regularizer::None,
    };

    let oracle = OracleDynamics(env);
    let dynamics: &dyn Dynamics = if study.oracle { &oracle } else { &model };
    let state0 = env.reset(&mut seeded(derive_seed(seed, SEED_PLAN, 0), 0x656e76));
    let s0 = dynamics.initial_state(&state0, &env.observe(&state0));
    let len = cfg.mpc.horizon + 1;
    let init = Plan::midpoint(len, env.action_bounds())?;

    let mut rows = Vec::with_capacity(study.cells.len());
    for cell in &study.cells {
        let alpha = if cell.regularized { study.alpha } else { 0.0 };
        let mpc = MpcConfig {
            planner: cell.planner,
            alpha,
            ..cfg.mpc.clone()
        };
        let spec = ObjectiveSpec {
            dynamics,
            env,
            regularizer: reg,
            alpha,
            stop_gradient: cfg.mpc.stop_gradient,
        };
        let plan_seed = derive_seed(seed, SEED_PLAN, 1);
        let plan = plan_once(&spec, &s0, &init, &mpc, true, plan_seed).map_err(|e| e.at_stage("mpc"))?;
        let report = open_loop_eval(env, dynamics, Regularizer::None, &plan, &state0)?;
        rows.push(GapRow {
            cell: cell.name(cfg.regularizer),
            seed,
            alpha,
            imagined: report.imagined_return(),
            realized: report.realized_return(),
            gap: report.gap,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_has_four_cells() {
        let names: Vec<String> = GapCell::grid(None)
            .iter()
            .map(|c| c.name(RegularizerKind::Dae))
            .collect();
        assert_eq!(names, ["cem", "cem+dae", "adam", "adam+dae"]);
        assert_eq!(GapCell::grid(Some(PlannerKind::Adam)).len(), 2);
    }
}
