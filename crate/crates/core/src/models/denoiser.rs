//! Denoising autoencoder over windows of `(o, a)` pairs.
//!
//! For Gaussian corruption with std `sigma` the optimal reconstruction
//! satisfies `g(x) - x = sigma^2 * d/dx log p_sigma(x)`, so the residual points
//! towards regions of high data density. The planning penalty is the squared
//! residual norm.

use ndarray::{Array2, Axis};
use rand_distr::{Distribution, StandardNormal};

use super::normalize::Normalizer;
use crate::autodiff::{adam_step, Activation, AdamState, Dense, MlpParams, Tape, Var};
use crate::mbrl::{BatchSampler, ReplayBuffer};
use crate::rng::seeded;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DaeConfig {
    pub hidden: Vec<usize>,
    /// Corruption std, in normalized units.
    pub sigma: f64,
    pub window: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for DaeConfig {
    fn default() -> Self {
        Self {
            hidden: vec![200, 200, 200],
            sigma: 0.1,
            window: 1,
            epochs: 100,
            batch_size: 32,
            lr: 1e-3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Denoiser {
    pub(crate) net: MlpParams,
    pub(crate) norm: Normalizer,
    pub(crate) sigma: f64,
    pub(crate) window: usize,
}

impl Denoiser {
    pub fn new(net: MlpParams, norm: Normalizer, sigma: f64, window: usize) -> Result<Self> {
        if net.input_dim() != net.output_dim() || net.input_dim() != norm.dim() {
            return Err(Error::shape(format!(
                "denoiser maps {} -> {} with {}-dim normalization",
                net.input_dim(),
                net.output_dim(),
                norm.dim()
            )));
        }
        if window == 0 || !norm.dim().is_multiple_of(window) {
            return Err(Error::config(
                "dae.window",
                format!("window {window} does not divide input dim {}", norm.dim()),
            ));
        }
        Ok(Self {
            net,
            norm,
            sigma,
            window,
        })
    }

    /// `g(x) = x`: a single linear layer with identity weights.
    pub fn identity(dim: usize) -> Self {
        let weight = Array2::eye(dim);
        let layer = Dense::new(weight, Array2::zeros((1, dim)), Activation::Identity).expect("square layer");
        let net = MlpParams::from_layers(vec![layer]).expect("one layer");
        Self {
            net,
            norm: Normalizer::identity(dim),
            sigma: 0.0,
            window: 1,
        }
    }

    pub fn dim(&self) -> usize {
        self.norm.dim()
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn network(&self) -> &MlpParams {
        &self.net
    }

    pub fn network_mut(&mut self) -> &mut MlpParams {
        &mut self.net
    }

    pub fn normalizer(&self) -> &Normalizer {
        &self.norm
    }

    fn check(&self, tape: &Tape, x: Var) -> Result<()> {
        let (_, c) = tape.shape(x);
        if c != self.dim() {
            return Err(Error::shape(format!("denoiser takes {} columns, got {c}", self.dim())));
        }
        Ok(())
    }

    /// Reconstruction in raw coordinates, one window per row.
    pub fn denoise(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        self.check(tape, x)?;
        let z = self.norm.normalize_on_tape(tape, x)?;
        let g = self.net.forward(tape, z)?;
        self.norm.denormalize_on_tape(tape, g)
    }

    pub fn denoise_one(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let v = tape.constant_row(x);
        let g = self.denoise(&mut tape, v)?;
        Ok(tape.value(g).iter().copied().collect())
    }

    /// Per-row `||g(z) - z||^2` in normalized coordinates, `B x 1`.
    ///
    /// With `stop_gradient` the reconstruction is treated as a constant
    /// target, so gradients only flow through the direct `z` term.
    pub fn penalty(&self, tape: &mut Tape, x: Var, stop_gradient: bool) -> Result<Var> {
        self.check(tape, x)?;
        let z = self.norm.normalize_on_tape(tape, x)?;
        let mut g = self.net.forward(tape, z)?;
        if stop_gradient {
            g = tape.stop_gradient(g);
        }
        let r = tape.sub(g, z)?;
        let r2 = tape.square(r);
        Ok(tape.sum_cols(r2))
    }

    pub fn penalty_one(&self, x: &[f64]) -> Result<f64> {
        let mut tape = Tape::new();
        let v = tape.constant_row(x);
        let p = self.penalty(&mut tape, v, false)?;
        Ok(tape.scalar(p))
    }
}

/// Total penalty over the rows of `x` as a `1 x 1` node.
pub fn dae_penalty(denoiser: &Denoiser, tape: &mut Tape, x: Var, stop_gradient: bool) -> Result<Var> {
    let per_row = denoiser.penalty(tape, x, stop_gradient)?;
    Ok(tape.sum(per_row))
}

/// Trains on every `w`-window of the buffer.
pub fn train_dae(buffer: &ReplayBuffer, cfg: &DaeConfig) -> Result<Denoiser> {
    let windows = buffer.windows(cfg.window)?;
    train_dae_on_windows(&windows, cfg)
}

/// Trains on raw window rows. Normalization is fitted to `windows`, and
/// corruption noise is redrawn for every mini-batch.
pub fn train_dae_on_windows(windows: &Array2<f64>, cfg: &DaeConfig) -> Result<Denoiser> {
    if !(cfg.sigma > 0.0) {
        return Err(Error::config("dae.sigma", "corruption std must be positive"));
    }
    if cfg.window == 0 || !windows.ncols().is_multiple_of(cfg.window) {
        return Err(Error::config("dae.window", "window does not divide the row width"));
    }
    let norm = Normalizer::fit(windows)?;
    let clean = norm.normalize_rows(windows);
    let dim = windows.ncols();
    let mut sizes = vec![dim];
    sizes.extend_from_slice(&cfg.hidden);
    sizes.push(dim);
    let mut rng = seeded(cfg.seed, 0x646165);
    let net = MlpParams::random(&sizes, Activation::Swish, Activation::Identity, &mut rng)?;
    let mut dae = Denoiser::new(net, norm, cfg.sigma, cfg.window)?;

    let mut sampler = BatchSampler::new(clean.nrows(), cfg.batch_size, cfg.seed)?;
    let mut noise_rng = seeded(cfg.seed, 0x6e6f6973);
    let mut adam = AdamState::new(cfg.lr);
    for epoch in 0..cfg.epochs {
        for batch in sampler.epoch() {
            let target = clean.select(Axis(0), &batch);
            let noisy = target.mapv(|v| v + cfg.sigma * Distribution::<f64>::sample(&StandardNormal, &mut noise_rng));
            let mut tape = Tape::new();
            let bound = dae.net.bind(&mut tape, true);
            let x = tape.constant(noisy);
            let y = tape.constant(target);
            let g = bound.forward(&mut tape, x)?;
            let r = tape.sub(g, y)?;
            let r2 = tape.square(r);
            let loss = tape.mean(r2);
            if !tape.scalar(loss).is_finite() {
                return Err(Error::non_finite(format!("denoiser loss at epoch {epoch}")));
            }
            let mut grads = tape.backward(loss)?;
            let g: Vec<Array2<f64>> = bound.param_vars().into_iter().map(|v| grads.take(v)).collect();
            adam_step(&mut dae.net.tensors_mut(), &g, &mut adam)?;
        }
    }
    Ok(dae)
}
