//! Probabilistic one-step model `o' = o + delta`, delta ~ N(mean, var).

use ndarray::Array2;

use super::normalize::Normalizer;
use crate::autodiff::{adam_step, Activation, AdamState, BoundMlp, MlpParams, Tape, Var};
use crate::mbrl::{BatchSampler, ReplayBuffer, Transitions};
use crate::rng::seeded;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DynamicsConfig {
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    pub log_var_min: f64,
    pub log_var_max: f64,
}

impl Default for DynamicsConfig {
    fn default() -> Self {
        Self {
            hidden: vec![200, 200, 200],
            epochs: 100,
            batch_size: 32,
            lr: 1e-3,
            seed: 0,
            log_var_min: -10.0,
            log_var_max: 4.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DynamicsModel {
    pub(crate) trunk: MlpParams,
    pub(crate) mean_head: MlpParams,
    pub(crate) log_var_head: MlpParams,
    pub(crate) input_norm: Normalizer,
    pub(crate) output_norm: Normalizer,
    pub(crate) state_dim: usize,
    pub(crate) action_dim: usize,
    pub(crate) log_var_bounds: (f64, f64),
}

/// A [`DynamicsModel`] placed on a tape.
#[derive(Debug, Clone)]
pub struct BoundDynamics {
    trunk: BoundMlp,
    mean_head: BoundMlp,
    log_var_head: BoundMlp,
}

impl BoundDynamics {
    fn param_vars(&self) -> Vec<Var> {
        let mut v = self.trunk.param_vars();
        v.extend(self.mean_head.param_vars());
        v.extend(self.log_var_head.param_vars());
        v
    }
}

impl DynamicsModel {
    /// Randomly initialized, untrained model with identity normalization.
    pub fn new(state_dim: usize, action_dim: usize, hidden: &[usize], seed: u64) -> Result<Self> {
        if hidden.is_empty() {
            return Err(Error::config("model.hidden", "need at least one hidden layer"));
        }
        let mut rng = seeded(seed, 0x64796e);
        let mut sizes = vec![state_dim + action_dim];
        sizes.extend_from_slice(hidden);
        let width = *hidden.last().expect("non-empty");
        let trunk = MlpParams::random(&sizes, Activation::Swish, Activation::Swish, &mut rng)?;
        let mean_head = MlpParams::random(
            &[width, state_dim],
            Activation::Identity,
            Activation::Identity,
            &mut rng,
        )?;
        let log_var_head = MlpParams::random(
            &[width, state_dim],
            Activation::Identity,
            Activation::Identity,
            &mut rng,
        )?;
        let d = DynamicsConfig::default();
        Ok(Self {
            trunk,
            mean_head,
            log_var_head,
            input_norm: Normalizer::identity(state_dim + action_dim),
            output_norm: Normalizer::identity(state_dim),
            state_dim,
            action_dim,
            log_var_bounds: (d.log_var_min, d.log_var_max),
        })
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    pub fn input_norm(&self) -> &Normalizer {
        &self.input_norm
    }

    pub fn output_norm(&self) -> &Normalizer {
        &self.output_norm
    }

    pub fn set_normalizers(&mut self, input: Normalizer, output: Normalizer) -> Result<()> {
        if input.dim() != self.state_dim + self.action_dim || output.dim() != self.state_dim {
            return Err(Error::shape("normalizer dimensions do not match the model"));
        }
        self.input_norm = input;
        self.output_norm = output;
        Ok(())
    }

    pub fn log_var_bounds(&self) -> (f64, f64) {
        self.log_var_bounds
    }

    pub fn trunk(&self) -> &MlpParams {
        &self.trunk
    }

    pub fn heads_mut(&mut self) -> (&mut MlpParams, &mut MlpParams) {
        (&mut self.mean_head, &mut self.log_var_head)
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> BoundDynamics {
        BoundDynamics {
            trunk: self.trunk.bind(tape, trainable),
            mean_head: self.mean_head.bind(tape, trainable),
            log_var_head: self.log_var_head.bind(tape, trainable),
        }
    }

    /// Normalized delta mean and clamped log-variance for raw `[o, a]` rows.
    fn forward_normalized(&self, tape: &mut Tape, net: &BoundDynamics, input: Var) -> Result<(Var, Var)> {
        let z = self.input_norm.normalize_on_tape(tape, input)?;
        let h = net.trunk.forward(tape, z)?;
        let mean = net.mean_head.forward(tape, h)?;
        let raw = net.log_var_head.forward(tape, h)?;
        Ok((mean, self.soft_clamp(tape, raw)))
    }

    /// Smooth clamp of log-variance into the open interval `(min, max)`:
    /// `c + h tanh((raw - c) / h)` with `c` the midpoint and `h` the half width.
    fn soft_clamp(&self, tape: &mut Tape, raw: Var) -> Var {
        let (lo, hi) = self.log_var_bounds;
        let (c, h) = (0.5 * (lo + hi), 0.5 * (hi - lo));
        let centered = tape.add_scalar(raw, -c);
        let scaled = tape.scale(centered, 1.0 / h);
        let squashed = tape.tanh(scaled);
        let out = tape.scale(squashed, h);
        tape.add_scalar(out, c)
    }

    fn check_input(&self, tape: &Tape, state: Var, action: Var) -> Result<()> {
        let (rs, cs) = tape.shape(state);
        let (ra, ca) = tape.shape(action);
        if cs != self.state_dim || ca != self.action_dim || rs != ra {
            return Err(Error::shape(format!(
                "model takes {} state and {} action columns, got {rs}x{cs} and {ra}x{ca}",
                self.state_dim, self.action_dim
            )));
        }
        Ok(())
    }

    /// Next-state mean and variance (raw units) for a batch of rows.
    pub fn predict_bound(&self, tape: &mut Tape, net: &BoundDynamics, state: Var, action: Var) -> Result<(Var, Var)> {
        self.check_input(tape, state, action)?;
        let input = tape.concat_cols(&[state, action])?;
        let (mean_n, log_var) = self.forward_normalized(tape, net, input)?;
        let delta = self.output_norm.denormalize_on_tape(tape, mean_n)?;
        let next = tape.add(state, delta)?;
        let var_n = tape.exp(log_var);
        let sq: Vec<f64> = self.output_norm.std.iter().map(|s| s * s).collect();
        let var = tape.col_affine(var_n, &sq, &vec![0.0; self.state_dim])?;
        Ok((next, var))
    }

    /// Next-state mean only; skips the variance head. This is what planning uses.
    pub fn predict_mean_bound(&self, tape: &mut Tape, net: &BoundDynamics, state: Var, action: Var) -> Result<Var> {
        self.check_input(tape, state, action)?;
        let input = tape.concat_cols(&[state, action])?;
        let z = self.input_norm.normalize_on_tape(tape, input)?;
        let h = net.trunk.forward(tape, z)?;
        let mean_n = net.mean_head.forward(tape, h)?;
        let delta = self.output_norm.denormalize_on_tape(tape, mean_n)?;
        tape.add(state, delta)
    }

    pub fn predict(&self, tape: &mut Tape, state: Var, action: Var) -> Result<(Var, Var)> {
        let net = self.bind(tape, false);
        self.predict_bound(tape, &net, state, action)
    }

    /// Single-sample prediction; rejects non-finite inputs.
    pub fn predict_one(&self, state: &[f64], action: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        if !state.iter().chain(action).all(|x| x.is_finite()) {
            return Err(Error::non_finite("model input"));
        }
        let mut tape = Tape::new();
        let s = tape.constant_row(state);
        let a = tape.constant_row(action);
        let (m, v) = self.predict(&mut tape, s, a)?;
        Ok((
            tape.value(m).iter().copied().collect(),
            tape.value(v).iter().copied().collect(),
        ))
    }

    /// States `s_0..s_H` from propagating means through `actions` (each `B x action_dim`).
    pub fn unroll_bound(&self, tape: &mut Tape, net: &BoundDynamics, s0: Var, actions: &[Var]) -> Result<Vec<Var>> {
        let mut states = Vec::with_capacity(actions.len() + 1);
        states.push(s0);
        for (k, &a) in actions.iter().enumerate() {
            let next = self.predict_mean_bound(tape, net, states[k], a)?;
            if !tape.value(next).iter().all(|x| x.is_finite()) {
                return Err(Error::Diverged { step: k + 1 });
            }
            states.push(next);
        }
        Ok(states)
    }

    pub fn unroll(&self, tape: &mut Tape, s0: Var, actions: &[Var]) -> Result<Vec<Var>> {
        let net = self.bind(tape, false);
        self.unroll_bound(tape, &net, s0, actions)
    }

    /// Gaussian negative log-likelihood of the deltas, per dimension, in
    /// normalized units.
    fn nll_on_tape(
        &self,
        tape: &mut Tape,
        net: &BoundDynamics,
        inputs: &Array2<f64>,
        targets: &Array2<f64>,
    ) -> Result<Var> {
        let x = tape.constant(inputs.clone());
        let y = tape.constant(targets.clone());
        let (mean, log_var) = self.forward_normalized(tape, net, x)?;
        let err = tape.sub(mean, y)?;
        let err2 = tape.square(err);
        let neg_lv = tape.neg(log_var);
        let prec = tape.exp(neg_lv);
        let weighted = tape.mul(err2, prec)?;
        let per = tape.add(weighted, log_var)?;
        Ok(tape.mean(per))
    }

    /// Mean per-dimension Gaussian NLL (normalized units, including the
    /// `ln 2 pi` constant) on a set of transitions.
    pub fn nll(&self, data: &Transitions) -> Result<f64> {
        if data.is_empty() {
            return Err(Error::EmptyData("no transitions to score".into()));
        }
        let inputs = data.inputs();
        let targets = self.output_norm.normalize_rows(&data.deltas());
        let mut tape = Tape::new();
        let net = self.bind(&mut tape, false);
        let loss = self.nll_on_tape(&mut tape, &net, &inputs, &targets)?;
        Ok(0.5 * (tape.scalar(loss) + (2.0 * std::f64::consts::PI).ln()))
    }
}

/// Fits a dynamics model to every transition in `buffer`.
///
/// Normalization statistics are recomputed from the buffer. With `warm` the
/// network weights start from a previous model; otherwise they are freshly
/// initialized from `cfg.seed`.
pub fn train_dynamics(
    buffer: &ReplayBuffer,
    cfg: &DynamicsConfig,
    warm: Option<&DynamicsModel>,
) -> Result<DynamicsModel> {
    let data = buffer.transitions()?;
    let (sd, ad) = (data.obs.ncols(), data.actions.ncols());
    let mut model = match warm {
        Some(m) if m.state_dim == sd && m.action_dim == ad => m.clone(),
        Some(_) => return Err(Error::shape("warm-start model dimensions differ from buffer")),
        None => DynamicsModel::new(sd, ad, &cfg.hidden, cfg.seed)?,
    };
    model.log_var_bounds = (cfg.log_var_min, cfg.log_var_max);
    let inputs = data.inputs();
    let deltas = data.deltas();
    model.input_norm = Normalizer::fit(&inputs)?;
    model.output_norm = Normalizer::fit(&deltas)?;
    let targets = model.output_norm.normalize_rows(&deltas);

    let mut sampler = BatchSampler::new(data.len(), cfg.batch_size, cfg.seed)?;
    let mut adam = AdamState::new(cfg.lr);
    for epoch in 0..cfg.epochs {
        for batch in sampler.epoch() {
            let x = inputs.select(ndarray::Axis(0), &batch);
            let y = targets.select(ndarray::Axis(0), &batch);
            let mut tape = Tape::new();
            let net = model.bind(&mut tape, true);
            let loss = model.nll_on_tape(&mut tape, &net, &x, &y)?;
            if !tape.scalar(loss).is_finite() {
                return Err(Error::non_finite(format!("dynamics loss at epoch {epoch}")));
            }
            let mut grads = tape.backward(loss)?;
            let g: Vec<Array2<f64>> = net.param_vars().into_iter().map(|v| grads.take(v)).collect();
            let mut params: Vec<&mut Array2<f64>> = model.trunk.tensors_mut();
            params.extend(model.mean_head.tensors_mut());
            params.extend(model.log_var_head.tensors_mut());
            adam_step(&mut params, &g, &mut adam)?;
        }
    }
    Ok(model)
}
