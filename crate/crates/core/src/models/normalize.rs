use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::{Error, Result};

/// Per-column standardization `z = (x - mean) / std`.
///
/// Columns with (near) zero spread get a unit scale so that constant inputs
/// pass through shifted but unscaled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

const MIN_STD: f64 = 1e-8;

impl Normalizer {
    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    pub fn fit(data: &Array2<f64>) -> Result<Self> {
        if data.nrows() == 0 {
            return Err(Error::EmptyData("cannot fit normalization to zero rows".into()));
        }
        let mean = data.mean_axis(Axis(0)).expect("non-empty").to_vec();
        let std = data
            .std_axis(Axis(0), 0.0)
            .iter()
            .map(|&s| if s < MIN_STD { 1.0 } else { s })
            .collect();
        Ok(Self { mean, std })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn normalize(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }

    pub fn denormalize(&self, z: &[f64]) -> Vec<f64> {
        z.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| v * s + m)
            .collect()
    }

    pub fn normalize_rows(&self, data: &Array2<f64>) -> Array2<f64> {
        let mut out = data.clone();
        for mut row in out.rows_mut() {
            for ((v, m), s) in row.iter_mut().zip(&self.mean).zip(&self.std) {
                *v = (*v - m) / s;
            }
        }
        out
    }

    fn scale_shift(&self) -> (Vec<f64>, Vec<f64>) {
        let scale: Vec<f64> = self.std.iter().map(|s| 1.0 / s).collect();
        let shift = self.mean.iter().zip(&scale).map(|(m, k)| -m * k).collect();
        (scale, shift)
    }

    pub fn normalize_on_tape(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let (scale, shift) = self.scale_shift();
        tape.col_affine(x, &scale, &shift)
    }

    pub fn denormalize_on_tape(&self, tape: &mut Tape, z: Var) -> Result<Var> {
        tape.col_affine(z, &self.std, &self.mean)
    }

    /// Maps a normalized displacement back to raw units (no mean shift).
    pub fn rescale_on_tape(&self, tape: &mut Tape, z: Var) -> Result<Var> {
        tape.col_affine(z, &self.std, &vec![0.0; self.dim()])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    #[test]
    fn constant_column_keeps_unit_scale() {
        let n = Normalizer::fit(&array![[1.0, 3.0], [1.0, 5.0]]).unwrap();
        assert_eq!(n.std, vec![1.0, 1.0]);
        assert_eq!(n.mean, vec![1.0, 4.0]);
    }

    #[test]
    fn empty_data_rejected() {
        assert!(Normalizer::fit(&Array2::zeros((0, 3))).is_err());
    }

    #[test]
    fn tape_matches_plain_path() {
        let n = Normalizer::fit(&array![[1.0, 3.0], [2.0, 7.0], [0.5, -1.0]]).unwrap();
        let mut tape = Tape::new();
        let x = tape.constant_row(&[0.3, 2.0]);
        let z = n.normalize_on_tape(&mut tape, x).unwrap();
        let expect = n.normalize(&[0.3, 2.0]);
        for (a, b) in tape.value(z).iter().zip(&expect) {
            assert!((a - b).abs() < 1e-14);
        }
        let back = n.denormalize_on_tape(&mut tape, z).unwrap();
        for (a, b) in tape.value(back).iter().zip([0.3, 2.0]) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    proptest! {
        #[test]
        fn round_trip(rows in prop::collection::vec(prop::collection::vec(-50.0f64..50.0, 3), 2..20),
                      probe in prop::collection::vec(-100.0f64..100.0, 3)) {
            let data = Array2::from_shape_vec((rows.len(), 3), rows.concat()).unwrap();
            let n = Normalizer::fit(&data).unwrap();
            let back = n.denormalize(&n.normalize(&probe));
            for (a, b) in back.iter().zip(&probe) {
                prop_assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()));
            }
        }
    }
}
