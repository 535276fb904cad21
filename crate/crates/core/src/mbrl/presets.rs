//! Hyperparameters reported for the MuJoCo benchmarks, kept as reference
//! values. The desk environments borrow the closest row.

use crate::control::PlannerKind;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PaperHyperparameters {
    pub benchmark: &'static str,
    pub optimizer: PlannerKind,
    pub optim_iters: usize,
    pub epochs: usize,
    /// Planner learning rate; CEM rows have none.
    pub adam_lr: Option<f64>,
    pub alpha: f64,
    pub dae_sigma: f64,
}

const fn row(
    benchmark: &'static str,
    optimizer: PlannerKind,
    optim_iters: usize,
    epochs: usize,
    adam_lr: Option<f64>,
    alpha: f64,
    dae_sigma: f64,
) -> PaperHyperparameters {
    PaperHyperparameters {
        benchmark,
        optimizer,
        optim_iters,
        epochs,
        adam_lr,
        alpha,
        dae_sigma,
    }
}

use PlannerKind::{Adam, Cem};

pub const PAPER_HYPERPARAMETERS: [PaperHyperparameters; 10] = [
    row("cartpole", Cem, 5, 500, None, 0.001, 0.1),
    row("cartpole", Adam, 10, 500, Some(0.001), 0.001, 0.2),
    row("reacher", Cem, 5, 500, None, 0.01, 0.1),
    row("reacher", Adam, 5, 300, Some(1.0), 0.01, 0.1),
    row("pusher", Cem, 5, 500, None, 0.01, 0.1),
    row("pusher", Adam, 5, 300, Some(1.0), 0.01, 0.1),
    row("half-cheetah", Cem, 5, 100, None, 2.0, 0.1),
    row("half-cheetah", Adam, 10, 200, Some(0.1), 1.0, 0.2),
    row("ant", Cem, 5, 400, None, 0.045, 0.3),
    row("ant", Adam, 10, 1000, Some(0.075), 0.03, 0.4),
];

pub fn paper_hyperparameters(benchmark: &str, optimizer: PlannerKind) -> Option<PaperHyperparameters> {
    PAPER_HYPERPARAMETERS
        .iter()
        .find(|r| r.benchmark == benchmark && r.optimizer == optimizer)
        .copied()
}

pub fn planning_horizon(benchmark: &str) -> Option<usize> {
    match benchmark {
        "cartpole" | "reacher" | "pusher" => Some(25),
        "half-cheetah" => Some(30),
        "ant" => Some(35),
        _ => None,
    }
}

/// CEM iterations used to initialize gradient-based planning.
pub fn cem_init_iterations(benchmark: &str) -> Option<usize> {
    match benchmark {
        "reacher" => Some(2),
        "pusher" => Some(5),
        _ => None,
    }
}

/// Window length and corruption level used for the process-control study.
pub const PROCESS_DAE_WINDOW: usize = 5;
pub const PROCESS_DAE_SIGMA: f64 = 0.03;
