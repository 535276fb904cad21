use ndarray::{Array2, Zip};

use crate::{Error, Result};

/// Moment buffers and hyperparameters of the Adam update.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    first: Vec<Array2<f64>>,
    second: Vec<Array2<f64>>,
}

impl AdamState {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn first_moments(&self) -> &[Array2<f64>] {
        &self.first
    }

    pub fn second_moments(&self) -> &[Array2<f64>] {
        &self.second
    }
}

/// One bias-corrected Adam descent step, in place.
///
/// Moment buffers are allocated (as zeros) on the first call. Non-finite
/// gradients are rejected before anything is modified.
pub fn adam_step(params: &mut [&mut Array2<f64>], grads: &[Array2<f64>], state: &mut AdamState) -> Result<()> {
    if params.len() != grads.len() {
        return Err(Error::shape(format!(
            "{} parameter tensors but {} gradients",
            params.len(),
            grads.len()
        )));
    }
    for (k, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.dim() != g.dim() {
            return Err(Error::shape(format!(
                "tensor {k}: parameter {:?} vs gradient {:?}",
                p.dim(),
                g.dim()
            )));
        }
        if !g.iter().all(|x| x.is_finite()) {
            return Err(Error::non_finite(format!("gradient tensor {k}")));
        }
    }
    if state.first.is_empty() {
        state.first = grads.iter().map(|g| Array2::zeros(g.dim())).collect();
        state.second = state.first.clone();
    } else if state.first.len() != grads.len() || state.first.iter().zip(grads).any(|(m, g)| m.dim() != g.dim()) {
        return Err(Error::shape("gradient shapes changed between Adam steps"));
    }

    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    let (lr, eps) = (state.lr, state.eps);

    for (((p, g), m), v) in params
        .iter_mut()
        .zip(grads)
        .zip(state.first.iter_mut())
        .zip(state.second.iter_mut())
    {
        Zip::from(&mut **p).and(g).and(m).and(v).for_each(|p, &g, m, v| {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = array![[1.0, -2.0]];
        let mut state = AdamState::new(0.1);
        adam_step(&mut [&mut p], &[Array2::zeros((1, 2))], &mut state).unwrap();
        assert_eq!(p, array![[1.0, -2.0]]);
        assert_eq!(state.step(), 1);
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        // m_hat = g, v_hat = g^2, so the step is lr * g / (|g| + eps).
        let grads = [3.0, -0.5, 1e-3, -40.0];
        let mut p = Array2::zeros((1, 4));
        let mut state = AdamState::new(0.1);
        adam_step(&mut [&mut p], &[array![grads]], &mut state).unwrap();
        for (x, g) in p.iter().zip(grads) {
            let expected = -0.1 * g / (g.abs() + 1e-8);
            assert!((x - expected).abs() < 1e-12);
            assert!((x.abs() - 0.1).abs() <= 0.1 * 1e-8 / g.abs() + 1e-15);
            assert_eq!(x.signum(), -g.signum());
        }
    }

    #[test]
    fn converges_on_shifted_quadratic() {
        let mut x = array![[0.0]];
        let mut state = AdamState::new(0.1);
        let mut converged_at = None;
        for k in 0..1000 {
            let g = array![[2.0 * (x[[0, 0]] - 5.0)]];
            adam_step(&mut [&mut x], &[g], &mut state).unwrap();
            if converged_at.is_none() && (x[[0, 0]] - 5.0).abs() <= 1e-4 {
                converged_at = Some(k);
            }
        }
        assert!(converged_at.is_some());
        assert!((x[[0, 0]] - 5.0).abs() <= 1e-4);
    }

    #[test]
    fn rejects_non_finite_gradient() {
        let mut p = array![[1.0]];
        let mut state = AdamState::new(0.1);
        let err = adam_step(&mut [&mut p], &[array![[f64::NAN]]], &mut state).unwrap_err();
        assert!(matches!(err, Error::NonFinite { .. }));
        assert_eq!(p, array![[1.0]]);
        assert_eq!(state.step(), 0);
    }

    #[test]
    fn rejects_shape_mismatch() {
        let mut p = array![[1.0, 2.0]];
        let mut state = AdamState::new(0.1);
        assert!(adam_step(&mut [&mut p], &[array![[1.0]]], &mut state).is_err());
    }
}
