//! Dense feed-forward networks recorded on a [`Tape`].

use ndarray::Array2;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::tape::{Tape, Var};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Swish,
    Tanh,
    Identity,
}

impl Activation {
    pub fn code(self) -> u8 {
        match self {
            Activation::Swish => 0,
            Activation::Tanh => 1,
            Activation::Identity => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Activation::Swish),
            1 => Some(Activation::Tanh),
            2 => Some(Activation::Identity),
            _ => None,
        }
    }

    fn apply(self, tape: &mut Tape, x: Var) -> Var {
        match self {
            Activation::Swish => tape.swish(x),
            Activation::Tanh => tape.tanh(x),
            Activation::Identity => x,
        }
    }
}

/// One affine layer `y = act(x W^T + b)` with `W` stored as `out x in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Array2<f64>,
    pub bias: Array2<f64>,
    pub activation: Activation,
}

impl Dense {
    pub fn new(weight: Array2<f64>, bias: Array2<f64>, activation: Activation) -> Result<Self> {
        if bias.dim() != (1, weight.nrows()) {
            return Err(Error::shape(format!(
                "bias {:?} does not match weight {:?}",
                bias.dim(),
                weight.dim()
            )));
        }
        Ok(Self {
            weight,
            bias,
            activation,
        })
    }

    pub fn zeros(input: usize, output: usize, activation: Activation) -> Self {
        Self {
            weight: Array2::zeros((output, input)),
            bias: Array2::zeros((1, output)),
            activation,
        }
    }

    /// Gaussian init with variance `1 / input`.
    pub fn random(input: usize, output: usize, activation: Activation, rng: &mut crate::rng::Rng) -> Self {
        let normal = Normal::new(0.0, (1.0 / input as f64).sqrt()).expect("positive std");
        let weight = Array2::from_shape_simple_fn((output, input), || normal.sample(rng));
        Self {
            weight,
            bias: Array2::zeros((1, output)),
            activation,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.nrows()
    }
}

/// Parameters of a multilayer perceptron.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    layers: Vec<Dense>,
}

/// Network parameters placed on a tape, ready for repeated forward passes.
#[derive(Debug, Clone)]
pub struct BoundMlp {
    layers: Vec<(Var, Var, Activation)>,
    input_dim: usize,
}

impl MlpParams {
    pub fn from_layers(layers: Vec<Dense>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::shape("network needs at least one layer"));
        }
        for (k, pair) in layers.windows(2).enumerate() {
            if pair[1].input_dim() != pair[0].output_dim() {
                return Err(Error::shape(format!(
                    "layer {} expects {} inputs but layer {} emits {}",
                    k + 1,
                    pair[1].input_dim(),
                    k,
                    pair[0].output_dim()
                )));
            }
        }
        Ok(Self { layers })
    }

    /// `sizes = [input, hidden.., output]`; hidden layers use `hidden`, the
    /// last layer uses `output`.
    pub fn random(sizes: &[usize], hidden: Activation, output: Activation, rng: &mut crate::rng::Rng) -> Result<Self> {
        if sizes.len() < 2 {
            return Err(Error::shape("need at least input and output sizes"));
        }
        let last = sizes.len() - 2;
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(k, w)| {
                let act = if k == last { output } else { hidden };
                Dense::random(w[0], w[1], act, rng)
            })
            .collect();
        Self::from_layers(layers)
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].output_dim()
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    /// Weight and bias buffers in layer order: `[W0, b0, W1, b1, ..]`.
    pub fn tensors(&self) -> Vec<&Array2<f64>> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias]).collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Array2<f64>> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }

    /// Place the parameters on `tape`. With `trainable` they are leaves that
    /// collect adjoints, otherwise constants.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> BoundMlp {
        let layers = self
            .layers
            .iter()
            .map(|l| {
                let (w, b) = if trainable {
                    (tape.leaf(l.weight.clone()), tape.leaf(l.bias.clone()))
                } else {
                    (tape.constant(l.weight.clone()), tape.constant(l.bias.clone()))
                };
                (w, b, l.activation)
            })
            .collect();
        BoundMlp {
            layers,
            input_dim: self.input_dim(),
        }
    }

    /// Forward pass of a batch (one sample per row) with frozen parameters.
    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        self.bind(tape, false).forward(tape, x)
    }
}

impl BoundMlp {
    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let (_, cols) = tape.shape(x);
        if cols != self.input_dim {
            return Err(Error::shape(format!(
                "network expects {} inputs, got {cols}",
                self.input_dim
            )));
        }
        let mut h = x;
        for &(w, b, act) in &self.layers {
            let z = tape.matmul_t(h, w)?;
            let z = tape.add_row(z, b)?;
            h = act.apply(tape, z);
        }
        Ok(h)
    }

    /// Parameter nodes in the order of [`MlpParams::tensors`].
    pub fn param_vars(&self) -> Vec<Var> {
        self.layers.iter().flat_map(|&(w, b, _)| [w, b]).collect()
    }
}

/// Records `params` applied to `input` on `tape` and returns the output node.
pub fn mlp_forward(params: &MlpParams, input: &[f64], tape: &mut Tape) -> Result<Var> {
    if input.len() != params.input_dim() {
        return Err(Error::shape(format!(
            "input has length {} but the first layer takes {}",
            input.len(),
            params.input_dim()
        )));
    }
    let x = tape.constant_row(input);
    params.forward(tape, x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn zero_weights_output_bias() {
        let mut layer = Dense::zeros(3, 2, Activation::Identity);
        layer.bias = ndarray::array![[0.5, -1.5]];
        let params = MlpParams::from_layers(vec![layer]).unwrap();
        let mut tape = Tape::new();
        let y = mlp_forward(&params, &[9.0, -4.0, 2.0], &mut tape).unwrap();
        assert_eq!(tape.value(y).as_slice().unwrap(), &[0.5, -1.5]);
    }

    #[test]
    fn swish_unit_at_zero_preactivation() {
        let params = MlpParams::from_layers(vec![Dense::zeros(1, 1, Activation::Swish)]).unwrap();
        let mut tape = Tape::new();
        let y = mlp_forward(&params, &[3.0], &mut tape).unwrap();
        assert_eq!(tape.scalar(y), 0.0);
    }

    #[test]
    fn rejects_wrong_input_length() {
        let mut rng = seeded(0, 0);
        let params = MlpParams::random(&[4, 8, 2], Activation::Swish, Activation::Identity, &mut rng).unwrap();
        let mut tape = Tape::new();
        let err = mlp_forward(&params, &[1.0, 2.0], &mut tape).unwrap_err();
        assert!(err.to_string().contains("takes 4"));
    }

    #[test]
    fn rejects_non_chaining_layers() {
        let layers = vec![
            Dense::zeros(3, 5, Activation::Tanh),
            Dense::zeros(4, 1, Activation::Identity),
        ];
        assert!(MlpParams::from_layers(layers).is_err());
    }
}
