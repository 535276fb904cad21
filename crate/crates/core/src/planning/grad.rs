//! Gradient ascent on `G_reg` with respect to the actions, through the
//! unrolled model.

use ndarray::{s, Array2};
use serde::{Deserialize, Serialize};

use super::cem::{cem_optimize, top_k, CemConfig};
use super::objective::{workers_from_env, ObjectiveSpec};
use super::plan::Plan;
use crate::autodiff::{adam_step, AdamState, Tape, Var};
use crate::rng::seeded;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WarmStart {
    Cold,
    ShiftPrevious,
    /// A few CEM iterations refine the initial plan before the Adam steps.
    CemInit(usize),
}

impl std::str::FromStr for WarmStart {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cold" => Ok(Self::Cold),
            "shift" | "shift-previous" => Ok(Self::ShiftPrevious),
            other => other
                .strip_prefix("cem:")
                .and_then(|k| k.parse().ok())
                .filter(|&k: &usize| k >= 1)
                .map(Self::CemInit)
                .ok_or_else(|| {
                    Error::config(
                        "adam.warm_start",
                        format!("expected cold, shift or cem:K, got `{other}`"),
                    )
                }),
        }
    }
}

impl std::fmt::Display for WarmStart {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Cold => f.write_str("cold"),
            Self::ShiftPrevious => f.write_str("shift"),
            Self::CemInit(k) => write!(f, "cem:{k}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradPlanConfig {
    pub iterations: usize,
    pub lr: f64,
    /// Restart 0 starts at the given plan, the rest at uniform random plans.
    pub restarts: usize,
    pub warm_start: WarmStart,
    /// Sampler used by [`WarmStart::CemInit`].
    pub cem: CemConfig,
}

impl Default for GradPlanConfig {
    fn default() -> Self {
        Self {
            iterations: 10,
            lr: 0.1,
            restarts: 1,
            warm_start: WarmStart::ShiftPrevious,
            cem: CemConfig::default(),
        }
    }
}

impl GradPlanConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::config("adam.iterations", "must be at least 1"));
        }
        if !(self.lr > 0.0) {
            return Err(Error::config("adam.lr", "must be positive"));
        }
        if self.restarts == 0 {
            return Err(Error::config("adam.restarts", "must be at least 1"));
        }
        if let WarmStart::CemInit(_) = self.warm_start {
            self.cem.validate()?;
        }
        Ok(())
    }
}

/// Adam on `-G_reg` over the action matrix, projecting onto the bounds after
/// every step. Restarts run together as rows of one batch.
///
/// A restart whose objective or gradient goes non-finite is abandoned; if all
/// of them are, the planner rejects.
pub fn adam_optimize(spec: &ObjectiveSpec, s0: &[f64], init: &Plan, cfg: &GradPlanConfig, seed: u64) -> Result<Plan> {
    cfg.validate()?;
    if !init.within_bounds() {
        return Err(Error::Planner("initial plan violates the bounds".into()));
    }
    let bounds = init.bounds().clone();
    let (len, d) = (init.len(), init.action_dim());

    let start = match cfg.warm_start {
        WarmStart::CemInit(k) => {
            let cem = CemConfig {
                iterations: k,
                ..cfg.cem.clone()
            };
            let workers = workers_from_env();
            cem_optimize(
                |pop| spec.score_population(s0, pop, len, workers),
                init,
                &cem,
                seed ^ 0x5eed,
            )?
        }
        _ => init.clone(),
    };

    let b = cfg.restarts;
    let mut rng = seeded(seed, 0x6164616d);
    // One tensor per time step, one row per restart.
    let mut actions: Vec<Array2<f64>> = (0..len).map(|_| Array2::zeros((b, d))).collect();
    for r in 0..b {
        let p = if r == 0 {
            start.clone()
        } else {
            Plan::uniform(len, &bounds, &mut rng)?
        };
        for (k, a) in actions.iter_mut().enumerate() {
            a.row_mut(r).assign(&p.action(k));
        }
    }
    let mut alive = vec![true; b];
    let mut adam = AdamState::new(cfg.lr);

    for _ in 0..cfg.iterations {
        let mut tape = Tape::new();
        let vars: Vec<Var> = actions.iter().map(|a| tape.leaf(a.clone())).collect();
        let roll = spec.build(&mut tape, s0, &vars)?;
        let values = tape.value(roll.objective).column(0).to_owned();
        let total = tape.sum(roll.objective);
        let grads = tape.backward(total)?;
        // Ascent on G_reg, so descend on its negation.
        let mut g: Vec<Array2<f64>> = vars.iter().map(|&v| grads.wrt(v).mapv(|x| -x)).collect();
        for r in 0..b {
            let finite = values[r].is_finite() && g.iter().all(|gk| gk.row(r).iter().all(|x| x.is_finite()));
            if !finite {
                alive[r] = false;
            }
            if !alive[r] {
                for gk in g.iter_mut() {
                    gk.row_mut(r).fill(0.0);
                }
            }
        }
        if !alive.iter().any(|&a| a) {
            return Err(Error::Planner("every restart produced a non-finite gradient".into()));
        }
        let mut params: Vec<&mut Array2<f64>> = actions.iter_mut().collect();
        adam_step(&mut params, &g, &mut adam)?;
        for a in actions.iter_mut() {
            for mut row in a.rows_mut() {
                bounds.clip_in_place(row.as_slice_mut().expect("standard layout"));
            }
        }
    }

    // Score the final iterates and keep the best surviving restart.
    let mut tape = Tape::new();
    let vars: Vec<Var> = actions.iter().map(|a| tape.constant(a.clone())).collect();
    let roll = spec.build(&mut tape, s0, &vars)?;
    let values: Vec<f64> = tape
        .value(roll.objective)
        .iter()
        .zip(&alive)
        .map(|(&v, &ok)| if ok { v } else { f64::NAN })
        .collect();
    let best = top_k(&values, 1)[0];
    if !values[best].is_finite() {
        return Err(Error::Planner("no restart ended at a finite objective".into()));
    }
    let mut out = Array2::zeros((len, d));
    for (k, a) in actions.iter().enumerate() {
        out.row_mut(k).assign(&a.slice(s![best, ..]));
    }
    Plan::new(out, bounds)
}
