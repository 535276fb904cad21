use ndarray::Array2;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::rng::{seeded, Rng};
use crate::{Error, Result};

/// One environment run: `T + 1` observations, `T` actions and rewards.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub observations: Vec<Vec<f64>>,
    pub actions: Vec<Vec<f64>>,
    pub rewards: Vec<f64>,
    #[serde(default)]
    pub truncated: bool,
    #[serde(default)]
    pub diverged: bool,
    /// Steps where the planner failed and a fallback action was executed.
    #[serde(default)]
    pub planner_fallbacks: usize,
}

impl Episode {
    pub fn new(first_obs: Vec<f64>) -> Self {
        Self {
            observations: vec![first_obs],
            actions: Vec::new(),
            rewards: Vec::new(),
            truncated: false,
            diverged: false,
            planner_fallbacks: 0,
        }
    }

    pub fn push(&mut self, action: Vec<f64>, reward: f64, next_obs: Vec<f64>) {
        self.actions.push(action);
        self.rewards.push(reward);
        self.observations.push(next_obs);
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn total_return(&self) -> f64 {
        self.rewards.iter().sum()
    }

    pub fn validate(&self) -> Result<()> {
        let t = self.actions.len();
        if self.observations.len() != t + 1 || self.rewards.len() != t {
            return Err(Error::Format {
                what: "episode".into(),
                message: format!(
                    "{} observations, {} actions, {} rewards",
                    self.observations.len(),
                    t,
                    self.rewards.len()
                ),
            });
        }
        if !self.rewards.iter().all(|r| r.is_finite()) {
            return Err(Error::non_finite("episode rewards"));
        }
        Ok(())
    }

    /// `[o_t, a_t, .., o_{t+w-1}, a_{t+w-1}]`.
    pub fn window(&self, start: usize, w: usize) -> Vec<f64> {
        let mut x = Vec::new();
        for k in start..start + w {
            x.extend_from_slice(&self.observations[k]);
            x.extend_from_slice(&self.actions[k]);
        }
        x
    }
}

/// Dense view of all transitions.
#[derive(Debug, Clone)]
pub struct Transitions {
    pub obs: Array2<f64>,
    pub actions: Array2<f64>,
    pub next_obs: Array2<f64>,
}

impl Transitions {
    pub fn len(&self) -> usize {
        self.obs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.obs.nrows() == 0
    }

    /// `[o, a]` rows.
    pub fn inputs(&self) -> Array2<f64> {
        ndarray::concatenate![ndarray::Axis(1), self.obs, self.actions]
    }

    /// `o' - o` rows.
    pub fn deltas(&self) -> Array2<f64> {
        &self.next_obs - &self.obs
    }

    pub fn select(&self, rows: &[usize]) -> Transitions {
        let pick = |a: &Array2<f64>| a.select(ndarray::Axis(0), rows);
        Transitions {
            obs: pick(&self.obs),
            actions: pick(&self.actions),
            next_obs: pick(&self.next_obs),
        }
    }
}

/// All experience collected so far, in collection order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReplayBuffer {
    episodes: Vec<Episode>,
}

impl ReplayBuffer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, episode: Episode) -> Result<()> {
        episode.validate()?;
        if let Some(first) = self.episodes.first() {
            let dims = |e: &Episode| {
                (
                    e.observations.first().map_or(0, Vec::len),
                    e.actions.first().map(Vec::len),
                )
            };
            let (od, ad) = dims(first);
            let (od2, ad2) = dims(&episode);
            if od != od2 || (ad.is_some() && ad2.is_some() && ad != ad2) {
                return Err(Error::shape("episode dimensions differ from buffer"));
            }
        }
        self.episodes.push(episode);
        Ok(())
    }

    pub fn episodes(&self) -> &[Episode] {
        &self.episodes
    }

    pub fn num_transitions(&self) -> usize {
        self.episodes.iter().map(Episode::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.num_transitions() == 0
    }

    fn dims(&self) -> Option<(usize, usize)> {
        self.episodes
            .iter()
            .find(|e| !e.is_empty())
            .map(|e| (e.observations[0].len(), e.actions[0].len()))
    }

    pub fn transitions(&self) -> Result<Transitions> {
        let (od, ad) = self
            .dims()
            .ok_or_else(|| Error::EmptyData("replay buffer has no transitions".into()))?;
        let n = self.num_transitions();
        let mut obs = Array2::zeros((n, od));
        let mut actions = Array2::zeros((n, ad));
        let mut next_obs = Array2::zeros((n, od));
        let mut row = 0;
        for e in &self.episodes {
            for t in 0..e.len() {
                obs.row_mut(row).assign(&ndarray::ArrayView1::from(&e.observations[t]));
                actions.row_mut(row).assign(&ndarray::ArrayView1::from(&e.actions[t]));
                next_obs
                    .row_mut(row)
                    .assign(&ndarray::ArrayView1::from(&e.observations[t + 1]));
                row += 1;
            }
        }
        Ok(Transitions { obs, actions, next_obs })
    }

    /// Windows of `w` consecutive `(o, a)` pairs; never crosses episodes.
    pub fn windows(&self, w: usize) -> Result<Array2<f64>> {
        if w == 0 {
            return Err(Error::config("dae.window", "window size must be at least 1"));
        }
        let (od, ad) = self
            .dims()
            .ok_or_else(|| Error::EmptyData("replay buffer has no transitions".into()))?;
        let rows: Vec<Vec<f64>> = self
            .episodes
            .iter()
            .filter(|e| e.len() >= w)
            .flat_map(|e| (0..=e.len() - w).map(move |t| e.window(t, w)))
            .collect();
        if rows.is_empty() {
            return Err(Error::EmptyData(format!("no episode has {w} consecutive steps")));
        }
        let mut out = Array2::zeros((rows.len(), w * (od + ad)));
        for (mut dst, src) in out.rows_mut().into_iter().zip(&rows) {
            dst.assign(&ndarray::ArrayView1::from(src));
        }
        Ok(out)
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for e in &self.episodes {
            out.push_str(&serde_json::to_string(e)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let mut buf = Self::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            buf.push(serde_json::from_str(line)?)?;
        }
        Ok(buf)
    }
}

/// Epoch-shuffled mini-batch index iterator over `n` rows.
///
/// Every epoch visits each row exactly once; successive epochs draw fresh
/// permutations from the same seeded stream.
#[derive(Debug)]
pub struct BatchSampler {
    n: usize,
    batch_size: usize,
    rng: Rng,
}

impl BatchSampler {
    pub fn new(n: usize, batch_size: usize, seed: u64) -> Result<Self> {
        if n == 0 {
            return Err(Error::EmptyData("nothing to sample from".into()));
        }
        if batch_size == 0 {
            return Err(Error::config("batch_size", "must be at least 1"));
        }
        Ok(Self {
            n,
            batch_size,
            rng: seeded(seed, 0x62617463),
        })
    }

    /// Index batches for the next epoch.
    pub fn epoch(&mut self) -> Vec<Vec<usize>> {
        let mut idx: Vec<usize> = (0..self.n).collect();
        idx.shuffle(&mut self.rng);
        idx.chunks(self.batch_size).map(<[usize]>::to_vec).collect()
    }
}

/// One epoch of shuffled transition batches.
pub fn sample_batches(buffer: &ReplayBuffer, batch_size: usize, seed: u64) -> Result<Vec<Transitions>> {
    let data = buffer.transitions()?;
    let mut sampler = BatchSampler::new(data.len(), batch_size, seed)?;
    Ok(sampler.epoch().iter().map(|b| data.select(b)).collect())
}

/// One epoch of shuffled window batches.
pub fn sample_window_batches(
    buffer: &ReplayBuffer,
    w: usize,
    batch_size: usize,
    seed: u64,
) -> Result<Vec<Array2<f64>>> {
    let data = buffer.windows(w)?;
    let mut sampler = BatchSampler::new(data.nrows(), batch_size, seed)?;
    Ok(sampler
        .epoch()
        .iter()
        .map(|b| data.select(ndarray::Axis(0), b))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_episode(t: usize, offset: f64) -> Episode {
        let mut e = Episode::new(vec![offset, 0.0]);
        for k in 0..t {
            let x = offset + k as f64 + 1.0;
            e.push(vec![k as f64], -(k as f64), vec![x, 0.0]);
        }
        e
    }

    #[test]
    fn windows_per_episode() {
        let mut b = ReplayBuffer::new();
        b.push(toy_episode(5, 0.0)).unwrap();
        assert_eq!(b.windows(3).unwrap().nrows(), 3);
        assert_eq!(b.windows(5).unwrap().nrows(), 1);
        assert!(matches!(b.windows(6), Err(Error::EmptyData(_))));
    }

    #[test]
    fn windows_never_straddle_episodes() {
        let mut b = ReplayBuffer::new();
        b.push(toy_episode(4, 0.0)).unwrap();
        b.push(toy_episode(4, 100.0)).unwrap();
        let w = b.windows(2).unwrap();
        assert_eq!(w.nrows(), 6);
        for row in w.rows() {
            // each row is [o, a, o', a'] with o'[0] = o[0] + 1
            assert_eq!(row[3], row[0] + 1.0);
        }
    }

    #[test]
    fn transition_count_is_sum_of_lengths() {
        let mut b = ReplayBuffer::new();
        b.push(toy_episode(5, 0.0)).unwrap();
        b.push(toy_episode(7, 10.0)).unwrap();
        assert_eq!(b.num_transitions(), 12);
        let tr = b.transitions().unwrap();
        assert_eq!(tr.len(), 12);
        assert!(tr.deltas().column(0).iter().all(|d| *d == 1.0));
    }

    #[test]
    fn empty_buffer_is_rejected() {
        let b = ReplayBuffer::new();
        assert!(matches!(b.transitions(), Err(Error::EmptyData(_))));
        assert!(sample_batches(&b, 4, 0).is_err());
        assert!(sample_window_batches(&b, 1, 4, 0).is_err());
    }

    #[test]
    fn large_batch_holds_everything_once() {
        let mut b = ReplayBuffer::new();
        b.push(toy_episode(6, 0.0)).unwrap();
        let batches = sample_batches(&b, 100, 3).unwrap();
        assert_eq!(batches.len(), 1);
        let mut a: Vec<f64> = batches[0].actions.iter().copied().collect();
        a.sort_by(f64::total_cmp);
        assert_eq!(a, vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0]);
    }

    #[test]
    fn epochs_reshuffle_same_multiset() {
        let mut s = BatchSampler::new(50, 50, 9).unwrap();
        let e1 = s.epoch().concat();
        let e2 = s.epoch().concat();
        assert_ne!(e1, e2);
        let (mut a, mut b) = (e1.clone(), e2.clone());
        a.sort();
        b.sort();
        assert_eq!(a, b);
        let mut again = BatchSampler::new(50, 50, 9).unwrap();
        assert_eq!(again.epoch().concat(), e1);
    }

    #[test]
    fn jsonl_round_trip() {
        let mut b = ReplayBuffer::new();
        b.push(toy_episode(3, 0.5)).unwrap();
        b.push(toy_episode(2, -1.0)).unwrap();
        let text = b.to_jsonl().unwrap();
        assert_eq!(text.lines().count(), 2);
        assert_eq!(ReplayBuffer::from_jsonl(&text).unwrap(), b);
    }

    #[test]
    fn inconsistent_episode_rejected() {
        let mut e = toy_episode(3, 0.0);
        e.rewards.pop();
        let mut b = ReplayBuffer::new();
        assert!(b.push(e).is_err());
    }
}
