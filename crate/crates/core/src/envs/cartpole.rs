//! Cart-pole swing-up with a uniform rod.
//!
//! State `(x, x_dot, theta, theta_dot)` with `theta = 0` hanging straight down
//! and `theta = pi` upright. Observation `(x, x_dot, sin theta, cos theta,
//! theta_dot)`. Integrated with semi-implicit Euler.

use rand_distr::{Distribution, Normal};

use super::{check_dims, col, Bounds, Environment};
use crate::autodiff::{Tape, Var};
use crate::rng::Rng;
use crate::Result;

pub const SUCCESS_STEPS: usize = 50;
/// Success tolerance as a fraction of the pole length.
pub const SUCCESS_TOLERANCE: f64 = 0.1;

#[derive(Debug, Clone)]
pub struct CartpoleSwingup {
    pub cart_mass: f64,
    pub pole_mass: f64,
    pub pole_length: f64,
    pub dt: f64,
    pub force_scale: f64,
    pub gravity: f64,
    pub cart_friction: f64,
    pub pole_friction: f64,
    pub action_cost: f64,
    pub init_std: f64,
    bounds: Bounds,
}

impl Default for CartpoleSwingup {
    fn default() -> Self {
        Self {
            cart_mass: 1.0,
            pole_mass: 0.1,
            pole_length: 0.6,
            dt: 0.05,
            force_scale: 10.0,
            gravity: 9.81,
            cart_friction: 0.1,
            pole_friction: 0.01,
            action_cost: 0.01,
            init_std: 0.05,
            bounds: Bounds::symmetric(1, 1.0),
        }
    }
}

/// Mass-matrix terms that do not depend on the state.
struct Consts {
    /// `m l` with `l` the distance to the rod's centre of mass.
    ml: f64,
    total_mass: f64,
    /// `(4/3) m l^2`, rod inertia about the pivot.
    inertia: f64,
    /// `(M + m) (4/3) m l^2`.
    det_offset: f64,
    /// `-(m l)^2`.
    det_scale: f64,
    mgl: f64,
}

impl CartpoleSwingup {
    fn consts(&self) -> Consts {
        let l = 0.5 * self.pole_length;
        let ml = self.pole_mass * l;
        let total_mass = self.cart_mass + self.pole_mass;
        let inertia = 4.0 / 3.0 * self.pole_mass * l * l;
        Consts {
            ml,
            total_mass,
            inertia,
            det_offset: total_mass * inertia,
            det_scale: -(ml * ml),
            mgl: ml * self.gravity,
        }
    }

    /// Position of the pole tip for an observation.
    pub fn tip(&self, obs: &[f64]) -> (f64, f64) {
        (obs[0] + obs[2] * self.pole_length, obs[3] * -self.pole_length)
    }

    /// Tip target: directly above the cart origin.
    pub fn target(&self) -> (f64, f64) {
        (0.0, self.pole_length)
    }

    pub fn tip_distance(&self, obs: &[f64]) -> f64 {
        let (tx, ty) = self.tip(obs);
        let (gx, gy) = self.target();
        ((tx - gx).powi(2) + (ty - gy).powi(2)).sqrt()
    }

    /// Largest tip distance over the last `steps` observations, or `None`
    /// when the episode is shorter than that.
    pub fn final_tip_error(&self, observations: &[Vec<f64>], steps: usize) -> Option<f64> {
        let tail = observations.len().checked_sub(steps).map(|k| &observations[k..])?;
        Some(tail.iter().map(|o| self.tip_distance(o)).fold(0.0, f64::max))
    }

    /// Swing-up success: the tip stays within a tenth of the pole length of
    /// the target for the final 50 steps.
    pub fn solved(&self, observations: &[Vec<f64>]) -> bool {
        self.final_tip_error(observations, SUCCESS_STEPS)
            .is_some_and(|e| e <= SUCCESS_TOLERANCE * self.pole_length)
    }

    /// Total mechanical energy with the pivot as potential reference.
    pub fn energy(&self, state: &[f64]) -> f64 {
        let c = self.consts();
        let (xd, th, thd) = (state[1], state[2], state[3]);
        0.5 * c.total_mass * xd * xd + c.ml * th.cos() * xd * thd + 0.5 * c.inertia * thd * thd - c.mgl * th.cos()
    }
}

impl Environment for CartpoleSwingup {
    fn id(&self) -> &'static str {
        "cartpole"
    }

    fn state_dim(&self) -> usize {
        4
    }

    fn obs_dim(&self) -> usize {
        5
    }

    fn action_dim(&self) -> usize {
        1
    }

    fn action_bounds(&self) -> &Bounds {
        &self.bounds
    }

    fn episode_len(&self) -> usize {
        200
    }

    fn reset(&self, rng: &mut Rng) -> Vec<f64> {
        let noise = Normal::new(0.0, self.init_std).expect("positive std");
        (0..4).map(|_| noise.sample(rng)).collect()
    }

    fn step(&self, state: &[f64], action: &[f64]) -> Vec<f64> {
        let k = self.consts();
        let (x, xd, th, thd) = (state[0], state[1], state[2], state[3]);
        let force = action[0] * self.force_scale;
        let s = th.sin();
        let c = th.cos();

        // Lagrange equations:
        //   (M+m) xdd + ml c thdd = F - bc xd + ml s thd^2
        //   ml c xdd + I thdd     = -mgl s - bp thd
        let r1 = force + xd * -self.cart_friction + s * k.ml * (thd * thd);
        let r2 = s * -k.mgl + thd * -self.pole_friction;
        let mlc = c * k.ml;
        let det = (c * c) * k.det_scale + k.det_offset;
        let xdd = (r1 * k.inertia - mlc * r2) / det;
        let thdd = (r2 * k.total_mass - mlc * r1) / det;

        let xd_next = xd + xdd * self.dt;
        let thd_next = thd + thdd * self.dt;
        vec![x + xd_next * self.dt, xd_next, th + thd_next * self.dt, thd_next]
    }

    fn observe(&self, state: &[f64]) -> Vec<f64> {
        vec![state[0], state[1], state[2].sin(), state[2].cos(), state[3]]
    }

    fn reward(&self, obs: &[f64], action: &[f64]) -> f64 {
        let (tx, ty) = self.tip(obs);
        let (gx, gy) = self.target();
        let dx = tx - gx;
        let dy = ty - gy;
        let d2 = dx * dx + dy * dy;
        let inv_l2 = -1.0 / (self.pole_length * self.pole_length);
        (d2 * inv_l2).exp() + (action[0] * action[0]) * -self.action_cost
    }

    fn step_on_tape(&self, tape: &mut Tape, state: Var, action: Var) -> Result<Var> {
        check_dims(tape, state, 4, "cartpole state")?;
        check_dims(tape, action, 1, "cartpole action")?;
        let k = self.consts();
        let x = col(tape, state, 0)?;
        let xd = col(tape, state, 1)?;
        let th = col(tape, state, 2)?;
        let thd = col(tape, state, 3)?;
        let force = tape.scale(action, self.force_scale);
        let s = tape.sin(th);
        let c = tape.cos(th);

        let friction = tape.scale(xd, -self.cart_friction);
        let r1 = tape.add(force, friction)?;
        let thd2 = tape.square(thd);
        let s_ml = tape.scale(s, k.ml);
        let centrifugal = tape.mul(s_ml, thd2)?;
        let r1 = tape.add(r1, centrifugal)?;
        let grav = tape.scale(s, -k.mgl);
        let pole_fr = tape.scale(thd, -self.pole_friction);
        let r2 = tape.add(grav, pole_fr)?;
        let mlc = tape.scale(c, k.ml);
        let c2 = tape.square(c);
        let det = tape.scale(c2, k.det_scale);
        let det = tape.add_scalar(det, k.det_offset);

        let a = tape.scale(r1, k.inertia);
        let b = tape.mul(mlc, r2)?;
        let num = tape.sub(a, b)?;
        let xdd = tape.div(num, det)?;
        let a = tape.scale(r2, k.total_mass);
        let b = tape.mul(mlc, r1)?;
        let num = tape.sub(a, b)?;
        let thdd = tape.div(num, det)?;

        let dv = tape.scale(xdd, self.dt);
        let xd_next = tape.add(xd, dv)?;
        let dx = tape.scale(xd_next, self.dt);
        let x_next = tape.add(x, dx)?;
        let dw = tape.scale(thdd, self.dt);
        let thd_next = tape.add(thd, dw)?;
        let dth = tape.scale(thd_next, self.dt);
        let th_next = tape.add(th, dth)?;
        tape.concat_cols(&[x_next, xd_next, th_next, thd_next])
    }

    fn observe_on_tape(&self, tape: &mut Tape, state: Var) -> Result<Var> {
        check_dims(tape, state, 4, "cartpole state")?;
        let x = col(tape, state, 0)?;
        let xd = col(tape, state, 1)?;
        let th = col(tape, state, 2)?;
        let thd = col(tape, state, 3)?;
        let s = tape.sin(th);
        let c = tape.cos(th);
        tape.concat_cols(&[x, xd, s, c, thd])
    }

    fn reward_on_tape(&self, tape: &mut Tape, obs: Var, action: Var) -> Result<Var> {
        check_dims(tape, obs, 5, "cartpole observation")?;
        check_dims(tape, action, 1, "cartpole action")?;
        let (gx, gy) = self.target();
        let x = col(tape, obs, 0)?;
        let s = col(tape, obs, 2)?;
        let c = col(tape, obs, 3)?;
        let reach = tape.scale(s, self.pole_length);
        let tx = tape.add(x, reach)?;
        let ty = tape.scale(c, -self.pole_length);
        let dx = tape.add_scalar(tx, -gx);
        let dy = tape.add_scalar(ty, -gy);
        let dx2 = tape.square(dx);
        let dy2 = tape.square(dy);
        let d2 = tape.add(dx2, dy2)?;
        let scaled = tape.scale(d2, -1.0 / (self.pole_length * self.pole_length));
        let shaped = tape.exp(scaled);
        let a2 = tape.square(action);
        let cost = tape.scale(a2, -self.action_cost);
        tape.add(shaped, cost)
    }
}
