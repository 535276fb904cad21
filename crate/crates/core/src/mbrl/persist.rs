//! Flat binary weight files.
//!
//! Layout, all integers `u32` and all reals `f64`, little endian:
//!
//! ```text
//! magic "RPLN" | version | kind (1 dynamics, 2 denoiser)
//! dynamics: state_dim | action_dim | log_var_min | log_var_max
//! denoiser: window | sigma
//! normalizers (dynamics: input then output; denoiser: input):
//!     dim | mean[dim] | std[dim]
//! networks (dynamics: trunk, mean head, log-var head; denoiser: one):
//!     layers | per layer: out | in | activation code | weight[out*in] row-major | bias[out]
//! ```

use ndarray::Array2;

use crate::autodiff::{Activation, Dense, MlpParams};
use crate::models::{Denoiser, DynamicsModel, Normalizer};
use crate::{Error, Result};

const MAGIC: &[u8; 4] = b"RPLN";
const VERSION: u32 = 1;
const KIND_DYNAMICS: u32 = 1;
const KIND_DENOISER: u32 = 2;

#[derive(Default)]
struct Writer(Vec<u8>);

impl Writer {
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn len(&mut self, v: usize) {
        self.u32(u32::try_from(v).expect("dimension fits in u32"));
    }

    fn normalizer(&mut self, n: &Normalizer) {
        self.len(n.dim());
        n.mean.iter().chain(&n.std).for_each(|&v| self.f64(v));
    }

    fn mlp(&mut self, p: &MlpParams) {
        self.len(p.layers().len());
        for l in p.layers() {
            let (out, inp) = l.weight.dim();
            self.len(out);
            self.len(inp);
            self.u32(l.activation.code() as u32);
            l.weight.iter().chain(l.bias.iter()).for_each(|&v| self.f64(v));
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

fn malformed(message: impl Into<String>) -> Error {
    Error::Format {
        what: "weight file".into(),
        message: message.into(),
    }
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| malformed(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn len(&mut self) -> Result<usize> {
        let n = self.u32()? as usize;
        // Every count is followed by at least that many values.
        if n > self.buf.len() {
            return Err(malformed(format!("implausible count {n}")));
        }
        Ok(n)
    }

    fn reals(&mut self, n: usize) -> Result<Vec<f64>> {
        (0..n).map(|_| self.f64()).collect()
    }

    fn normalizer(&mut self) -> Result<Normalizer> {
        let d = self.len()?;
        Ok(Normalizer {
            mean: self.reals(d)?,
            std: self.reals(d)?,
        })
    }

    fn mlp(&mut self) -> Result<MlpParams> {
        let n = self.len()?;
        let mut layers = Vec::with_capacity(n);
        for _ in 0..n {
            let out = self.len()?;
            let inp = self.len()?;
            let code = self.u32()?;
            let act = u8::try_from(code)
                .ok()
                .and_then(Activation::from_code)
                .ok_or_else(|| malformed(format!("unknown activation code {code}")))?;
            let w = Array2::from_shape_vec((out, inp), self.reals(out * inp)?).map_err(|e| malformed(e.to_string()))?;
            let b = Array2::from_shape_vec((1, out), self.reals(out)?).map_err(|e| malformed(e.to_string()))?;
            layers.push(Dense::new(w, b, act)?);
        }
        MlpParams::from_layers(layers)
    }

    fn header(&mut self, kind: u32) -> Result<()> {
        if self.take(4)? != MAGIC {
            return Err(malformed("bad magic"));
        }
        let v = self.u32()?;
        if v != VERSION {
            return Err(malformed(format!("unsupported version {v}")));
        }
        let k = self.u32()?;
        if k != kind {
            return Err(malformed(format!("expected kind {kind}, found {k}")));
        }
        Ok(())
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(malformed(format!("{} trailing bytes", self.buf.len() - self.pos)));
        }
        Ok(())
    }
}

fn header(w: &mut Writer, kind: u32) {
    w.0.extend_from_slice(MAGIC);
    w.u32(VERSION);
    w.u32(kind);
}

pub fn encode_dynamics(m: &DynamicsModel) -> Vec<u8> {
    let mut w = Writer::default();
    header(&mut w, KIND_DYNAMICS);
    w.len(m.state_dim);
    w.len(m.action_dim);
    w.f64(m.log_var_bounds.0);
    w.f64(m.log_var_bounds.1);
    w.normalizer(&m.input_norm);
    w.normalizer(&m.output_norm);
    w.mlp(&m.trunk);
    w.mlp(&m.mean_head);
    w.mlp(&m.log_var_head);
    w.0
}

pub fn decode_dynamics(bytes: &[u8]) -> Result<DynamicsModel> {
    let mut r = Reader { buf: bytes, pos: 0 };
    r.header(KIND_DYNAMICS)?;
    let state_dim = r.len()?;
    let action_dim = r.len()?;
    let bounds = (r.f64()?, r.f64()?);
    let input_norm = r.normalizer()?;
    let output_norm = r.normalizer()?;
    let trunk = r.mlp()?;
    let mean_head = r.mlp()?;
    let log_var_head = r.mlp()?;
    r.finish()?;
    let width = trunk.output_dim();
    let consistent = input_norm.dim() == state_dim + action_dim
        && output_norm.dim() == state_dim
        && trunk.input_dim() == state_dim + action_dim
        && mean_head.input_dim() == width
        && log_var_head.input_dim() == width
        && mean_head.output_dim() == state_dim
        && log_var_head.output_dim() == state_dim;
    if !consistent {
        return Err(malformed("dynamics dimensions are inconsistent"));
    }
    Ok(DynamicsModel {
        trunk,
        mean_head,
        log_var_head,
        input_norm,
        output_norm,
        state_dim,
        action_dim,
        log_var_bounds: bounds,
    })
}

pub fn encode_denoiser(d: &Denoiser) -> Vec<u8> {
    let mut w = Writer::default();
    header(&mut w, KIND_DENOISER);
    w.len(d.window);
    w.f64(d.sigma);
    w.normalizer(&d.norm);
    w.mlp(&d.net);
    w.0
}

pub fn decode_denoiser(bytes: &[u8]) -> Result<Denoiser> {
    let mut r = Reader { buf: bytes, pos: 0 };
    r.header(KIND_DENOISER)?;
    let window = r.len()?;
    let sigma = r.f64()?;
    let norm = r.normalizer()?;
    let net = r.mlp()?;
    r.finish()?;
    Denoiser::new(net, norm, sigma, window)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dynamics_round_trip() {
        let mut m = DynamicsModel::new(3, 2, &[5, 4], 9).unwrap();
        m.set_normalizers(
            Normalizer {
                mean: vec![1.0, 2.0, 3.0, 4.0, 5.0],
                std: vec![0.5; 5],
            },
            Normalizer::identity(3),
        )
        .unwrap();
        let bytes = encode_dynamics(&m);
        assert_eq!(&bytes[..4], b"RPLN");
        assert_eq!(decode_dynamics(&bytes).unwrap(), m);
    }

    #[test]
    fn denoiser_round_trip() {
        let d = Denoiser::identity(4);
        assert_eq!(decode_denoiser(&encode_denoiser(&d)).unwrap(), d);
    }

    #[test]
    fn rejects_corruption() {
        let bytes = encode_dynamics(&DynamicsModel::new(2, 1, &[3], 0).unwrap());
        assert!(decode_dynamics(&bytes[..bytes.len() - 1]).is_err());
        assert!(decode_denoiser(&bytes).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(decode_dynamics(&extra).is_err());
        let mut bad = bytes;
        bad[0] = b'X';
        assert!(decode_dynamics(&bad).is_err());
    }
}
