//! Deterministic, fully observable environments with differentiable rewards.
//!
//! Each environment exposes its dynamics twice: as plain `f64` code used when
//! stepping the real system, and as tape operations used when an environment
//! stands in for a learned model (the oracle planner). Both paths evaluate the
//! same arithmetic in the same order, so they agree bit for bit.

mod cartpole;
mod reacher;
mod reactor;

pub use cartpole::{CartpoleSwingup, SUCCESS_STEPS, SUCCESS_TOLERANCE};
pub use reacher::PointReacher;
pub use reactor::ReactorSurrogate;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::rng::Rng;
use crate::{Error, Result};

/// Per-dimension closed interval `[low, high]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub low: Vec<f64>,
    pub high: Vec<f64>,
}

impl Bounds {
    pub fn new(low: Vec<f64>, high: Vec<f64>) -> Result<Self> {
        if low.len() != high.len() {
            return Err(Error::shape("bounds: low and high differ in length"));
        }
        if low.iter().zip(&high).any(|(l, h)| !(l <= h)) {
            return Err(Error::shape("bounds: low must not exceed high"));
        }
        Ok(Self { low, high })
    }

    pub fn symmetric(dim: usize, half_width: f64) -> Self {
        Self {
            low: vec![-half_width; dim],
            high: vec![half_width; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.low.len()
    }

    pub fn clip(&self, dim: usize, v: f64) -> f64 {
        v.clamp(self.low[dim], self.high[dim])
    }

    pub fn clip_in_place(&self, action: &mut [f64]) {
        for (d, a) in action.iter_mut().enumerate() {
            *a = self.clip(d, *a);
        }
    }

    pub fn contains(&self, action: &[f64]) -> bool {
        action.len() == self.dim()
            && action
                .iter()
                .enumerate()
                .all(|(d, &a)| a >= self.low[d] && a <= self.high[d])
    }

    pub fn range(&self, dim: usize) -> f64 {
        self.high[dim] - self.low[dim]
    }

    pub fn midpoint(&self) -> Vec<f64> {
        self.low.iter().zip(&self.high).map(|(l, h)| 0.5 * (l + h)).collect()
    }
}

/// A control problem with known reward `r(o, a)`.
///
/// State is owned by the caller; the environment itself is immutable.
pub trait Environment: Send + Sync {
    fn id(&self) -> &'static str;
    fn state_dim(&self) -> usize;
    fn obs_dim(&self) -> usize;
    fn action_dim(&self) -> usize;
    fn action_bounds(&self) -> &Bounds;
    fn episode_len(&self) -> usize;

    /// Seeded initial state.
    fn reset(&self, rng: &mut Rng) -> Vec<f64>;
    fn step(&self, state: &[f64], action: &[f64]) -> Vec<f64>;
    fn observe(&self, state: &[f64]) -> Vec<f64>;
    fn reward(&self, obs: &[f64], action: &[f64]) -> f64;

    /// Batched dynamics, one state per row.
    fn step_on_tape(&self, tape: &mut Tape, state: Var, action: Var) -> Result<Var>;
    fn observe_on_tape(&self, tape: &mut Tape, state: Var) -> Result<Var>;
    /// Batched reward, `B x 1`.
    fn reward_on_tape(&self, tape: &mut Tape, obs: Var, action: Var) -> Result<Var>;
}

pub const ENV_IDS: [&str; 3] = ["cartpole", "reacher2d", "reactor"];

pub fn make_env(id: &str) -> Result<Box<dyn Environment>> {
    match id {
        "cartpole" => Ok(Box::new(CartpoleSwingup::default())),
        "reacher2d" => Ok(Box::new(PointReacher::default())),
        "reactor" => Ok(Box::new(ReactorSurrogate::default())),
        other => Err(Error::config(
            "env.id",
            format!("unknown environment `{other}` (expected one of {})", ENV_IDS.join(", ")),
        )),
    }
}

pub fn is_finite(v: &[f64]) -> bool {
    v.iter().all(|x| x.is_finite())
}

/// Column `j` of a batched node.
pub(crate) fn col(tape: &mut Tape, x: Var, j: usize) -> Result<Var> {
    tape.slice_cols(x, j, 1)
}

pub(crate) fn check_dims(tape: &Tape, x: Var, cols: usize, what: &str) -> Result<()> {
    let (_, c) = tape.shape(x);
    if c != cols {
        return Err(Error::shape(format!("{what}: expected {cols} columns, got {c}")));
    }
    Ok(())
}

#[cfg(test)]
pub(crate) mod testing {
    use super::*;
    use crate::autodiff::{finite_diff_grad, max_relative_error};

    /// Tape dynamics, observation and reward must reproduce the f64 path exactly.
    pub fn assert_tape_matches(env: &dyn Environment, state: &[f64], action: &[f64]) {
        let mut tape = Tape::new();
        let s = tape.constant_row(state);
        let a = tape.constant_row(action);
        let next = env.step_on_tape(&mut tape, s, a).unwrap();
        assert_eq!(tape.value(next).as_slice().unwrap(), env.step(state, action).as_slice());
        let o = env.observe_on_tape(&mut tape, s).unwrap();
        let obs = env.observe(state);
        assert_eq!(tape.value(o).as_slice().unwrap(), obs.as_slice());
        let r = env.reward_on_tape(&mut tape, o, a).unwrap();
        assert_eq!(tape.scalar(r), env.reward(&obs, action));
    }

    pub fn reward_action_gradient_error(env: &dyn Environment, obs: &[f64], action: &[f64]) -> f64 {
        let mut tape = Tape::new();
        let o = tape.constant_row(obs);
        let a = tape.row(action);
        let r = env.reward_on_tape(&mut tape, o, a).unwrap();
        let g = tape.backward(r).unwrap().wrt(a);
        let fd = finite_diff_grad(|x| env.reward(obs, x), action, 1e-5);
        max_relative_error(g.as_slice().unwrap(), &fd)
    }

    pub fn reward_obs_gradient_error(env: &dyn Environment, obs: &[f64], action: &[f64]) -> f64 {
        let mut tape = Tape::new();
        let o = tape.row(obs);
        let a = tape.constant_row(action);
        let r = env.reward_on_tape(&mut tape, o, a).unwrap();
        let g = tape.backward(r).unwrap().wrt(o);
        let fd = finite_diff_grad(|x| env.reward(x, action), obs, 1e-5);
        max_relative_error(g.as_slice().unwrap(), &fd)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ids_resolve() {
        for id in ENV_IDS {
            assert_eq!(make_env(id).unwrap().id(), id);
        }
        let err = make_env("ant").err().unwrap();
        assert!(err.to_string().contains("env.id"));
    }

    #[test]
    fn episode_lengths() {
        assert_eq!(make_env("cartpole").unwrap().episode_len(), 200);
        assert_eq!(make_env("reacher2d").unwrap().episode_len(), 150);
        assert_eq!(make_env("reactor").unwrap().episode_len(), 300);
    }

    #[test]
    fn bounds_clip_and_contain() {
        let b = Bounds::new(vec![-1.0, 0.0], vec![1.0, 2.0]).unwrap();
        let mut a = [3.0, -1.0];
        b.clip_in_place(&mut a);
        assert_eq!(a, [1.0, 0.0]);
        assert!(b.contains(&a));
        assert!(!b.contains(&[0.0, 2.5]));
        assert!(Bounds::new(vec![1.0], vec![0.0]).is_err());
    }
}
