//! Trajectory optimization over a learned (or true) model.

mod cem;
mod grad;
mod objective;
mod plan;

pub use cem::{cem_optimize, cem_optimize_traced, top_k, CemConfig, CemTrace};
pub use grad::{adam_optimize, GradPlanConfig, WarmStart};
pub use objective::{
    evaluate_plan, expected_return, regularized_return, workers_from_env, Dynamics, ObjectiveSpec, OracleDynamics,
    PlanValue, Regularizer, Rollout,
};
pub use plan::{warm_start_shift, Plan, ShiftFill};
