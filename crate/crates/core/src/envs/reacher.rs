//! Planar point mass reaching a goal that moves every episode.
//!
//! State `(px, py, vx, vy, gx, gy)`; the goal is carried in the state so that
//! the dynamics stay pure. The observation is the goal-relative position and
//! the velocity, so the reward depends on `(o, a)` alone.

use rand::Rng as _;

use super::{check_dims, col, Bounds, Environment};
use crate::autodiff::{Tape, Var};
use crate::rng::Rng;
use crate::Result;

#[derive(Debug, Clone)]
pub struct PointReacher {
    pub dt: f64,
    pub goal_range: f64,
    bounds: Bounds,
}

impl Default for PointReacher {
    fn default() -> Self {
        Self {
            dt: 0.05,
            goal_range: 1.0,
            bounds: Bounds::symmetric(2, 1.0),
        }
    }
}

impl PointReacher {
    /// State at rest at the origin with the given goal.
    pub fn state_with_goal(&self, goal: [f64; 2]) -> Vec<f64> {
        vec![0.0, 0.0, 0.0, 0.0, goal[0], goal[1]]
    }

    pub fn goal_distance(&self, obs: &[f64]) -> f64 {
        (obs[0] * obs[0] + obs[1] * obs[1]).sqrt()
    }
}

impl Environment for PointReacher {
    fn id(&self) -> &'static str {
        "reacher2d"
    }

    fn state_dim(&self) -> usize {
        6
    }

    fn obs_dim(&self) -> usize {
        4
    }

    fn action_dim(&self) -> usize {
        2
    }

    fn action_bounds(&self) -> &Bounds {
        &self.bounds
    }

    fn episode_len(&self) -> usize {
        150
    }

    fn reset(&self, rng: &mut Rng) -> Vec<f64> {
        let r = self.goal_range;
        self.state_with_goal([rng.random_range(-r..=r), rng.random_range(-r..=r)])
    }

    fn step(&self, state: &[f64], action: &[f64]) -> Vec<f64> {
        let half_dt2 = 0.5 * self.dt * self.dt;
        let mut next = state.to_vec();
        for d in 0..2 {
            next[d] = state[d] + state[2 + d] * self.dt + action[d] * half_dt2;
            next[2 + d] = state[2 + d] + action[d] * self.dt;
        }
        next
    }

    fn observe(&self, state: &[f64]) -> Vec<f64> {
        vec![state[0] - state[4], state[1] - state[5], state[2], state[3]]
    }

    fn reward(&self, obs: &[f64], _action: &[f64]) -> f64 {
        -(obs[0] * obs[0] + obs[1] * obs[1])
    }

    fn step_on_tape(&self, tape: &mut Tape, state: Var, action: Var) -> Result<Var> {
        check_dims(tape, state, 6, "reacher state")?;
        check_dims(tape, action, 2, "reacher action")?;
        let half_dt2 = 0.5 * self.dt * self.dt;
        let p = tape.slice_cols(state, 0, 2)?;
        let v = tape.slice_cols(state, 2, 2)?;
        let goal = tape.slice_cols(state, 4, 2)?;
        let vdt = tape.scale(v, self.dt);
        let p_next = tape.add(p, vdt)?;
        let push = tape.scale(action, half_dt2);
        let p_next = tape.add(p_next, push)?;
        let adt = tape.scale(action, self.dt);
        let v_next = tape.add(v, adt)?;
        tape.concat_cols(&[p_next, v_next, goal])
    }

    fn observe_on_tape(&self, tape: &mut Tape, state: Var) -> Result<Var> {
        check_dims(tape, state, 6, "reacher state")?;
        let p = tape.slice_cols(state, 0, 2)?;
        let v = tape.slice_cols(state, 2, 2)?;
        let goal = tape.slice_cols(state, 4, 2)?;
        let rel = tape.sub(p, goal)?;
        tape.concat_cols(&[rel, v])
    }

    fn reward_on_tape(&self, tape: &mut Tape, obs: Var, action: Var) -> Result<Var> {
        check_dims(tape, obs, 4, "reacher observation")?;
        check_dims(tape, action, 2, "reacher action")?;
        let ex = col(tape, obs, 0)?;
        let ey = col(tape, obs, 1)?;
        let ex2 = tape.square(ex);
        let ey2 = tape.square(ey);
        let d2 = tape.add(ex2, ey2)?;
        Ok(tape.neg(d2))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::testing::*;
    use crate::rng::seeded;

    #[test]
    fn at_goal_at_rest_is_stationary_with_zero_reward() {
        let env = PointReacher::default();
        let s = vec![0.3, -0.2, 0.0, 0.0, 0.3, -0.2];
        assert_eq!(env.step(&s, &[0.0, 0.0]), s);
        assert_eq!(env.reward(&env.observe(&s), &[0.0, 0.0]), 0.0);
    }

    #[test]
    fn zero_action_integrates_velocity() {
        let env = PointReacher::default();
        let mut s = vec![0.0, 0.0, 0.25, -0.5, 0.0, 0.0];
        for _ in 0..8 {
            s = env.step(&s, &[0.0, 0.0]);
        }
        let expected = [8.0 * 0.05 * 0.25, 8.0 * 0.05 * -0.5, 0.25, -0.5];
        for (got, want) in s[..4].iter().zip(expected) {
            assert!((got - want).abs() < 1e-15);
        }
    }

    #[test]
    fn bang_bang_reaches_goal_in_minimal_steps() {
        // From rest with |a| <= 1, the largest displacement that ends at rest
        // after 2n steps is (n dt)^2, reached by n steps of full thrust
        // followed by n of full braking.
        let env = PointReacher::default();
        for n in [4usize, 10, 16] {
            let d = (n as f64 * env.dt).powi(2);
            let mut s = env.state_with_goal([d, -d]);
            for k in 0..2 * n {
                let a = if k < n { 1.0 } else { -1.0 };
                s = env.step(&s, &[a, -a]);
            }
            let o = env.observe(&s);
            assert!(o.iter().all(|x| x.abs() < 1e-12), "{o:?}");
        }
    }

    #[test]
    fn goal_changes_between_episodes() {
        let env = PointReacher::default();
        let mut rng = seeded(1, 0);
        let a = env.reset(&mut rng);
        let b = env.reset(&mut rng);
        assert_ne!(&a[4..], &b[4..]);
        assert!(a[4..].iter().all(|g| g.abs() <= 1.0));
    }

    #[test]
    fn tape_path_is_bit_identical() {
        let env = PointReacher::default();
        let mut rng = seeded(2, 0);
        for k in 0..10 {
            let mut s = env.reset(&mut rng);
            s[2] = 0.1 * k as f64;
            s[0] = -0.07 * k as f64;
            assert_tape_matches(&env, &s, &[0.3, -0.8]);
        }
    }

    #[test]
    fn reward_gradients_match_finite_differences() {
        let env = PointReacher::default();
        for k in 0..10 {
            let obs = [0.1 * k as f64 - 0.5, 0.3, 0.2, -0.1];
            assert!(reward_obs_gradient_error(&env, &obs, &[0.1, 0.2]) <= 1e-6);
            assert!(reward_action_gradient_error(&env, &obs, &[0.1, 0.2]) <= 1e-6);
        }
    }
}
