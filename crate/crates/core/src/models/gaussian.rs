//! Diagonal Gaussian density over windows, the simplest stand-in for `p(x)`.

use std::f64::consts::PI;

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::mbrl::ReplayBuffer;
use crate::{Error, Result};

pub const VARIANCE_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianRegularizer {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub floor: f64,
    pub window: usize,
}

impl GaussianRegularizer {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// `-sum_i log N(x_i; mean_i, var_i)`.
    pub fn penalty(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(Error::shape(format!(
                "gaussian takes {} values, got {}",
                self.dim(),
                x.len()
            )));
        }
        Ok(x.iter()
            .zip(self.mean.iter().zip(&self.var))
            .map(|(x, (m, v))| 0.5 * (2.0 * PI * v).ln() + (x - m) * (x - m) / (2.0 * v))
            .sum())
    }

    /// Per-row penalty, `B x 1`.
    pub fn penalty_on_tape(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let (_, c) = tape.shape(x);
        if c != self.dim() {
            return Err(Error::shape(format!("gaussian takes {} columns, got {c}", self.dim())));
        }
        let scale: Vec<f64> = self.var.iter().map(|v| (0.5 / v).sqrt()).collect();
        let shift: Vec<f64> = self.mean.iter().zip(&scale).map(|(m, k)| -m * k).collect();
        let z = tape.col_affine(x, &scale, &shift)?;
        let z2 = tape.square(z);
        let quad = tape.sum_cols(z2);
        let log_norm: f64 = self.var.iter().map(|v| 0.5 * (2.0 * PI * v).ln()).sum();
        Ok(tape.add_scalar(quad, log_norm))
    }
}

/// Maximum-likelihood diagonal fit to raw rows.
pub fn fit_gaussian_rows(data: &Array2<f64>, window: usize) -> Result<GaussianRegularizer> {
    if data.nrows() == 0 {
        return Err(Error::EmptyData("cannot fit a Gaussian to zero rows".into()));
    }
    let mean = data.mean_axis(Axis(0)).expect("non-empty").to_vec();
    let var = data
        .var_axis(Axis(0), 0.0)
        .iter()
        .map(|v| v.max(VARIANCE_FLOOR))
        .collect();
    Ok(GaussianRegularizer {
        mean,
        var,
        floor: VARIANCE_FLOOR,
        window,
    })
}

/// Fit over every `w`-window in the buffer.
pub fn fit_gaussian(buffer: &ReplayBuffer, window: usize) -> Result<GaussianRegularizer> {
    fit_gaussian_rows(&buffer.windows(window)?, window)
}
