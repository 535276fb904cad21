//! Closed-loop MPC and open-loop imagination/reality diagnostics.

mod gap;
mod mpc;

pub use crate::planning::OracleDynamics;
pub use gap::{open_loop_eval, GapReport};
pub use mpc::{mpc_episode, mpc_from_state, plan_once, MpcConfig, MpcTrace, PlannerKind};
