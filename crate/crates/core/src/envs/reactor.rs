//! Nonlinear stirred-tank reactor with a pressure constraint.
//!
//! A qualitative setpoint-tracking process, not a model of any particular
//! plant. State `(level, pressure, concentration)`, fully observed. Actions are
//! a feed valve and a vent/drain valve, both in `[0, 1]`.
//!
//! ```text
//! level'   = level + dt (k_feed u1 - k_out level (leak + u2))
//! press'   = press + dt (k_gas u1 conc - k_vent press (leak + u2))
//! conc'    = conc + dt (u1 (c_feed - conc) - k_rxn conc level)
//! ```
//!
//! With both valves closed every flow term is a decay, so level, pressure and
//! concentration fall monotonically.

use rand::Rng as _;

use super::{check_dims, col, Bounds, Environment};
use crate::autodiff::{Tape, Var};
use crate::rng::Rng;
use crate::Result;

#[derive(Debug, Clone)]
pub struct ReactorSurrogate {
    pub dt: f64,
    pub k_feed: f64,
    pub k_out: f64,
    pub k_gas: f64,
    pub k_vent: f64,
    pub k_rxn: f64,
    pub c_feed: f64,
    pub leak: f64,
    /// Operating point reached with valves at [`Self::nominal_valves`].
    pub setpoint: [f64; 3],
    pub nominal_valves: [f64; 2],
    /// Per-state divisor in the tracking cost.
    pub tolerance: [f64; 3],
    pub pressure_limit: f64,
    pub barrier_weight: f64,
    bounds: Bounds,
}

impl Default for ReactorSurrogate {
    fn default() -> Self {
        Self {
            dt: 0.1,
            k_feed: 1.0,
            k_out: 1.0,
            k_gas: 2.0,
            k_vent: 1.0,
            k_rxn: 0.5,
            c_feed: 1.0,
            leak: 0.1,
            setpoint: [1.0, 1.0, 0.5],
            nominal_valves: [0.5, 0.4],
            tolerance: [0.5, 0.5, 0.25],
            pressure_limit: 1.3,
            barrier_weight: 100.0,
            bounds: Bounds::new(vec![0.0, 0.0], vec![1.0, 1.0]).expect("valid bounds"),
        }
    }
}

impl Environment for ReactorSurrogate {
    fn id(&self) -> &'static str {
        "reactor"
    }

    fn state_dim(&self) -> usize {
        3
    }

    fn obs_dim(&self) -> usize {
        3
    }

    fn action_dim(&self) -> usize {
        2
    }

    fn action_bounds(&self) -> &Bounds {
        &self.bounds
    }

    fn episode_len(&self) -> usize {
        300
    }

    fn reset(&self, rng: &mut Rng) -> Vec<f64> {
        vec![
            rng.random_range(0.5..1.5),
            rng.random_range(0.4..1.2),
            rng.random_range(0.2..0.8),
        ]
    }

    fn step(&self, state: &[f64], action: &[f64]) -> Vec<f64> {
        let (level, press, conc) = (state[0], state[1], state[2]);
        let (feed, vent) = (action[0], action[1]);
        let opening = vent + self.leak;
        let d_level = feed * self.k_feed - level * self.k_out * opening;
        let d_press = feed * self.k_gas * conc - press * self.k_vent * opening;
        let d_conc = feed * (self.c_feed - conc) - conc * self.k_rxn * level;
        vec![
            level + d_level * self.dt,
            press + d_press * self.dt,
            conc + d_conc * self.dt,
        ]
    }

    fn observe(&self, state: &[f64]) -> Vec<f64> {
        state.to_vec()
    }

    fn reward(&self, obs: &[f64], _action: &[f64]) -> f64 {
        let err = |i: usize| (obs[i] - self.setpoint[i]) * (1.0 / self.tolerance[i]);
        let (e0, e1, e2) = (err(0), err(1), err(2));
        let cost = e0 * e0 + e1 * e1 + e2 * e2;
        let excess = (obs[1] - self.pressure_limit).max(0.0);
        -cost + (excess * excess) * -self.barrier_weight
    }

    fn step_on_tape(&self, tape: &mut Tape, state: Var, action: Var) -> Result<Var> {
        check_dims(tape, state, 3, "reactor state")?;
        check_dims(tape, action, 2, "reactor action")?;
        let level = col(tape, state, 0)?;
        let press = col(tape, state, 1)?;
        let conc = col(tape, state, 2)?;
        let feed = col(tape, action, 0)?;
        let vent = col(tape, action, 1)?;
        let opening = tape.add_scalar(vent, self.leak);

        let inflow = tape.scale(feed, self.k_feed);
        let lk = tape.scale(level, self.k_out);
        let outflow = tape.mul(lk, opening)?;
        let d_level = tape.sub(inflow, outflow)?;

        let fg = tape.scale(feed, self.k_gas);
        let gas = tape.mul(fg, conc)?;
        let pk = tape.scale(press, self.k_vent);
        let vented = tape.mul(pk, opening)?;
        let d_press = tape.sub(gas, vented)?;

        let nc = tape.scale(conc, -1.0);
        let deficit = tape.add_scalar(nc, self.c_feed);
        let fed = tape.mul(feed, deficit)?;
        let ck = tape.scale(conc, self.k_rxn);
        let consumed = tape.mul(ck, level)?;
        let d_conc = tape.sub(fed, consumed)?;

        let mut next = Vec::with_capacity(3);
        for (x, dx) in [(level, d_level), (press, d_press), (conc, d_conc)] {
            let inc = tape.scale(dx, self.dt);
            next.push(tape.add(x, inc)?);
        }
        tape.concat_cols(&next)
    }

    fn observe_on_tape(&self, tape: &mut Tape, state: Var) -> Result<Var> {
        check_dims(tape, state, 3, "reactor state")?;
        Ok(state)
    }

    fn reward_on_tape(&self, tape: &mut Tape, obs: Var, action: Var) -> Result<Var> {
        check_dims(tape, obs, 3, "reactor observation")?;
        check_dims(tape, action, 2, "reactor action")?;
        let mut cost: Option<Var> = None;
        for i in 0..3 {
            let x = col(tape, obs, i)?;
            let e = tape.add_scalar(x, -self.setpoint[i]);
            let e = tape.scale(e, 1.0 / self.tolerance[i]);
            let e2 = tape.square(e);
            cost = Some(match cost {
                None => e2,
                Some(c) => tape.add(c, e2)?,
            });
        }
        let cost = cost.expect("three terms");
        let p = col(tape, obs, 1)?;
        let over = tape.add_scalar(p, -self.pressure_limit);
        let excess = tape.relu(over);
        let excess2 = tape.square(excess);
        let barrier = tape.scale(excess2, -self.barrier_weight);
        let neg_cost = tape.neg(cost);
        tape.add(neg_cost, barrier)
    }
}
