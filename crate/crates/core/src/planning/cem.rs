use std::cmp::Ordering;

use ndarray::Array2;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::plan::Plan;
use crate::rng::seeded;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CemConfig {
    pub population: usize,
    pub elites: usize,
    pub iterations: usize,
    /// Initial sampling std as a fraction of each bound range.
    pub init_std_fraction: f64,
    pub std_floor: f64,
    /// Weight kept on the previous mean/std at each refit.
    pub smoothing: f64,
}

impl Default for CemConfig {
    fn default() -> Self {
        Self {
            population: 400,
            elites: 40,
            iterations: 5,
            init_std_fraction: 0.25,
            std_floor: 1e-4,
            smoothing: 0.1,
        }
    }
}

impl CemConfig {
    pub fn validate(&self) -> Result<()> {
        if self.population == 0 {
            return Err(Error::config("cem.population", "must be at least 1"));
        }
        if self.elites == 0 || self.elites > self.population {
            return Err(Error::config("cem.elites", "must lie in 1..=population"));
        }
        if self.iterations == 0 {
            return Err(Error::config("cem.iterations", "must be at least 1"));
        }
        if !(self.init_std_fraction > 0.0) {
            return Err(Error::config("cem.init_std_fraction", "must be positive"));
        }
        if !(self.std_floor >= 0.0) {
            return Err(Error::config("cem.std_floor", "must be non-negative"));
        }
        if !(0.0..1.0).contains(&self.smoothing) {
            return Err(Error::config("cem.smoothing", "must lie in [0, 1)"));
        }
        Ok(())
    }
}

/// Per-iteration record of a CEM run.
#[derive(Debug, Clone, PartialEq)]
pub struct CemTrace {
    pub plan: Plan,
    /// Population indices of the elites, best first, per iteration.
    pub elites: Vec<Vec<usize>>,
    /// Best objective value seen per iteration.
    pub best: Vec<f64>,
}

/// Indices of the `k` best values, descending, ties broken by index.
/// Non-finite values rank below everything else.
pub fn top_k(values: &[f64], k: usize) -> Vec<usize> {
    let key = |v: f64| if v.is_finite() { v } else { f64::NEG_INFINITY };
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| match key(values[b]).partial_cmp(&key(values[a])) {
        Some(Ordering::Equal) | None => a.cmp(&b),
        Some(o) => o,
    });
    idx.truncate(k);
    idx
}

/// Cross-entropy method over flattened plans, starting from a diagonal
/// Gaussian centred on `init`.
///
/// `objective` scores a whole population (`N x (len * action_dim)`, clipped to
/// the bounds) and returns one value per row; larger is better.
pub fn cem_optimize<F>(objective: F, init: &Plan, cfg: &CemConfig, seed: u64) -> Result<Plan>
where
    F: FnMut(&Array2<f64>) -> Result<Vec<f64>>,
{
    cem_optimize_traced(objective, init, cfg, seed).map(|t| t.plan)
}

pub fn cem_optimize_traced<F>(mut objective: F, init: &Plan, cfg: &CemConfig, seed: u64) -> Result<CemTrace>
where
    F: FnMut(&Array2<f64>) -> Result<Vec<f64>>,
{
    cfg.validate()?;
    let bounds = init.bounds();
    let (len, d) = (init.len(), init.action_dim());
    let n = len * d;
    let mut mean = init.flat();
    let mut std: Vec<f64> = (0..n)
        .map(|i| (cfg.init_std_fraction * bounds.range(i % d)).max(cfg.std_floor))
        .collect();
    let mut rng = seeded(seed, 0x63656d);
    let mut trace = CemTrace {
        plan: init.clone(),
        elites: Vec::with_capacity(cfg.iterations),
        best: Vec::with_capacity(cfg.iterations),
    };

    for it in 0..cfg.iterations {
        let mut pop = Array2::zeros((cfg.population, n));
        for mut row in pop.rows_mut() {
            for (i, x) in row.iter_mut().enumerate() {
                let z: f64 = StandardNormal.sample(&mut rng);
                *x = bounds.clip(i % d, mean[i] + std[i] * z);
            }
        }
        let values = objective(&pop)?;
        if values.len() != cfg.population {
            return Err(Error::shape(format!(
                "objective returned {} values for {} candidates",
                values.len(),
                cfg.population
            )));
        }
        if !values.iter().any(|v| v.is_finite()) {
            return Err(Error::Planner(format!(
                "every CEM candidate was non-finite at iteration {it}"
            )));
        }
        let elites = top_k(&values, cfg.elites);
        trace.best.push(values[elites[0]]);

        let m = elites.len() as f64;
        for i in 0..n {
            let mu = elites.iter().map(|&e| pop[[e, i]]).sum::<f64>() / m;
            let var = elites.iter().map(|&e| (pop[[e, i]] - mu).powi(2)).sum::<f64>() / m;
            mean[i] = cfg.smoothing * mean[i] + (1.0 - cfg.smoothing) * mu;
            std[i] = (cfg.smoothing * std[i] + (1.0 - cfg.smoothing) * var.sqrt()).max(cfg.std_floor);
        }
        trace.elites.push(elites);
    }
    trace.plan = Plan::from_flat(&mean, len, bounds)?;
    Ok(trace)
}
