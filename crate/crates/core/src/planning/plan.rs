use ndarray::{Array2, ArrayView1};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::envs::Bounds;
use crate::rng::Rng;
use crate::{Error, Result};

/// A sequence of actions `a_0..a_{L-1}`, one per row, kept inside `bounds`.
#[derive(Debug, Clone, PartialEq)]
pub struct Plan {
    actions: Array2<f64>,
    bounds: Bounds,
}

impl Plan {
    /// Clips `actions` into `bounds`.
    pub fn new(mut actions: Array2<f64>, bounds: Bounds) -> Result<Self> {
        if actions.ncols() != bounds.dim() {
            return Err(Error::shape(format!(
                "plan has {} action columns but bounds have {}",
                actions.ncols(),
                bounds.dim()
            )));
        }
        if actions.nrows() == 0 {
            return Err(Error::shape("a plan needs at least one action"));
        }
        if !actions.iter().all(|a| a.is_finite()) {
            return Err(Error::non_finite("plan actions"));
        }
        for mut row in actions.rows_mut() {
            bounds.clip_in_place(row.as_slice_mut().expect("standard layout"));
        }
        Ok(Self { actions, bounds })
    }

    pub fn constant(len: usize, action: &[f64], bounds: &Bounds) -> Result<Self> {
        let flat: Vec<f64> = (0..len).flat_map(|_| action.iter().copied()).collect();
        let actions = Array2::from_shape_vec((len, action.len()), flat).map_err(|e| Error::shape(e.to_string()))?;
        Self::new(actions, bounds.clone())
    }

    /// Every action at the centre of the box; the cold-start initialization.
    pub fn midpoint(len: usize, bounds: &Bounds) -> Result<Self> {
        Self::constant(len, &bounds.midpoint(), bounds)
    }

    pub fn uniform(len: usize, bounds: &Bounds, rng: &mut Rng) -> Result<Self> {
        let d = bounds.dim();
        let actions = Array2::from_shape_fn((len, d), |(_, j)| {
            if bounds.range(j) > 0.0 {
                rng.random_range(bounds.low[j]..=bounds.high[j])
            } else {
                bounds.low[j]
            }
        });
        Self::new(actions, bounds.clone())
    }

    pub fn from_flat(flat: &[f64], len: usize, bounds: &Bounds) -> Result<Self> {
        let actions =
            Array2::from_shape_vec((len, bounds.dim()), flat.to_vec()).map_err(|e| Error::shape(e.to_string()))?;
        Self::new(actions, bounds.clone())
    }

    /// Number of actions.
    pub fn len(&self) -> usize {
        self.actions.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.nrows() == 0
    }

    /// `H`, the index of the last action.
    pub fn horizon(&self) -> usize {
        self.len() - 1
    }

    pub fn action_dim(&self) -> usize {
        self.actions.ncols()
    }

    pub fn actions(&self) -> &Array2<f64> {
        &self.actions
    }

    pub fn bounds(&self) -> &Bounds {
        &self.bounds
    }

    pub fn action(&self, k: usize) -> ArrayView1<'_, f64> {
        self.actions.row(k)
    }

    pub fn first(&self) -> Vec<f64> {
        self.actions.row(0).to_vec()
    }

    /// Row-major flattening, `a_0` first.
    pub fn flat(&self) -> Vec<f64> {
        self.actions.iter().copied().collect()
    }

    pub fn within_bounds(&self) -> bool {
        self.actions
            .rows()
            .into_iter()
            .all(|r| self.bounds.contains(r.as_slice().expect("standard layout")))
    }
}

/// How the slot freed by [`warm_start_shift`] is filled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ShiftFill {
    Zeros,
    RepeatLast,
    Resample,
}

impl std::str::FromStr for ShiftFill {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "zeros" => Ok(Self::Zeros),
            "repeat-last" => Ok(Self::RepeatLast),
            "resample" => Ok(Self::Resample),
            other => Err(Error::config("mpc.shift_fill", format!("unknown fill `{other}`"))),
        }
    }
}

/// Drops `a_0`, moves every action one slot earlier and fills the last slot.
/// `rng` is only drawn from for [`ShiftFill::Resample`].
pub fn warm_start_shift(previous: &Plan, fill: ShiftFill, rng: &mut Rng) -> Plan {
    let (len, d) = previous.actions.dim();
    let bounds = &previous.bounds;
    let mut actions = Array2::zeros((len, d));
    for k in 0..len - 1 {
        actions.row_mut(k).assign(&previous.actions.row(k + 1));
    }
    let last = match fill {
        ShiftFill::Zeros => vec![0.0; d],
        ShiftFill::RepeatLast => previous.actions.row(len - 1).to_vec(),
        ShiftFill::Resample => (0..d)
            .map(|j| {
                if bounds.range(j) > 0.0 {
                    rng.random_range(bounds.low[j]..=bounds.high[j])
                } else {
                    bounds.low[j]
                }
            })
            .collect(),
    };
    for (j, v) in last.into_iter().enumerate() {
        actions[[len - 1, j]] = bounds.clip(j, v);
    }
    Plan {
        actions,
        bounds: bounds.clone(),
    }
}
