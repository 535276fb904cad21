use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::envs::{is_finite, Environment};
use crate::planning::{Dynamics, ObjectiveSpec, Plan, Regularizer};
use crate::{Error, Result};

/// Imagined versus realized cumulative return of one open-loop plan.
///
/// All sequences have one entry per plan action (`H + 1`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapReport {
    /// Cumulative model-predicted return after each step.
    pub imagined: Vec<f64>,
    /// Cumulative return actually collected by the environment.
    pub realized: Vec<f64>,
    /// Regularizer penalty of the window starting at each step of the
    /// imagined trajectory; zero where no full window fits or no
    /// regularizer is given.
    pub penalties: Vec<f64>,
    /// `imagined - realized` at the end of the plan.
    pub gap: f64,
    /// The real environment went non-finite; later realized entries repeat
    /// the last finite value.
    pub diverged: bool,
}

impl GapReport {
    pub fn imagined_return(&self) -> f64 {
        *self.imagined.last().expect("non-empty")
    }

    pub fn realized_return(&self) -> f64 {
        *self.realized.last().expect("non-empty")
    }
}

fn cumulative(v: &[f64]) -> Vec<f64> {
    v.iter()
        .scan(0.0, |acc, &x| {
            *acc += x;
            Some(*acc)
        })
        .collect()
}

/// Executes `plan` open loop from environment state `s0`, once in the model's
/// imagination and once for real.
pub fn open_loop_eval(
    env: &dyn Environment,
    dynamics: &dyn Dynamics,
    regularizer: Regularizer,
    plan: &Plan,
    s0: &[f64],
) -> Result<GapReport> {
    if s0.len() != env.state_dim() {
        return Err(Error::shape(format!(
            "env state has {} entries, got {}",
            env.state_dim(),
            s0.len()
        )));
    }
    let obs0 = env.observe(s0);
    let spec = ObjectiveSpec::new(dynamics, env).with_regularizer(regularizer, 1.0);
    let start = dynamics.initial_state(s0, &obs0);
    let mut tape = Tape::new();
    let actions: Vec<_> = (0..plan.len())
        .map(|k| tape.constant_row(plan.action(k).as_slice().expect("row")))
        .collect();
    let roll = spec.build(&mut tape, &start, &actions)?;
    let imagined_rewards: Vec<f64> = roll.rewards.iter().map(|&r| tape.scalar(r)).collect();
    let mut penalties = vec![0.0; plan.len()];
    for (tau, &p) in roll.penalties.iter().enumerate() {
        penalties[tau] = tape.scalar(p);
    }

    let mut realized_rewards = Vec::with_capacity(plan.len());
    let mut diverged = false;
    let mut state = s0.to_vec();
    for k in 0..plan.len() {
        let a = plan.action(k).to_vec();
        let r = env.reward(&env.observe(&state), &a);
        if !r.is_finite() {
            diverged = true;
            break;
        }
        realized_rewards.push(r);
        if k + 1 < plan.len() {
            state = env.step(&state, &a);
            if !is_finite(&state) {
                diverged = true;
                break;
            }
        }
    }
    let imagined = cumulative(&imagined_rewards);
    let mut realized = cumulative(&realized_rewards);
    let last = realized.last().copied().unwrap_or(0.0);
    realized.resize(plan.len(), last);
    let gap = imagined[imagined.len() - 1] - realized[realized.len() - 1];
    Ok(GapReport {
        imagined,
        realized,
        penalties,
        gap,
        diverged,
    })
}
