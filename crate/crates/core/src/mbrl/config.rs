//! Run configuration and its flat `key = value` text form.
//!
//! ```text
//! # comments start with '#'
//! env.id = cartpole
//! run.episodes = 15
//! planner.kind = cem
//! planner.alpha = 0.001
//! dae.sigma = 0.1
//! mpc.horizon = 25
//! ```
//!
//! Keys not given keep the per-environment defaults of [`RunConfig::for_env`].

use std::collections::BTreeMap;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::presets::{paper_hyperparameters, planning_horizon, PROCESS_DAE_SIGMA, PROCESS_DAE_WINDOW};
use crate::control::{MpcConfig, PlannerKind};
use crate::envs::ENV_IDS;
use crate::models::{DaeConfig, DynamicsConfig};
use crate::planning::{CemConfig, GradPlanConfig, ShiftFill, WarmStart};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RegularizerKind {
    None,
    Dae,
    Gaussian,
}

impl FromStr for RegularizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Self::None),
            "dae" => Ok(Self::Dae),
            "gaussian" => Ok(Self::Gaussian),
            other => Err(Error::config(
                "planner.regularizer",
                format!("expected none, dae or gaussian, got `{other}`"),
            )),
        }
    }
}

impl std::fmt::Display for RegularizerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::None => "none",
            Self::Dae => "dae",
            Self::Gaussian => "gaussian",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub env_id: String,
    pub seed: u64,
    /// Total episodes, the random seeding ones included.
    pub episodes: usize,
    pub random_episodes: usize,
    pub model: DynamicsConfig,
    /// Continue from the previous episode's weights instead of reinitializing.
    pub model_warm_start: bool,
    pub regularizer: RegularizerKind,
    pub dae: DaeConfig,
    pub mpc: MpcConfig,
    /// Fill `wall_time_s` in the metrics (breaks byte-identical reruns).
    pub record_wall_time: bool,
}

impl RunConfig {
    /// Desk-scale defaults for one of the built-in environments.
    pub fn for_env(env_id: &str) -> Result<Self> {
        if !ENV_IDS.contains(&env_id) {
            return Err(Error::config(
                "env.id",
                format!(
                    "unknown environment `{env_id}` (expected one of {})",
                    ENV_IDS.join(", ")
                ),
            ));
        }
        let benchmark = match env_id {
            "reacher2d" => "reacher",
            _ => "cartpole",
        };
        let paper = paper_hyperparameters(benchmark, PlannerKind::Cem).expect("table row");
        let paper_adam = paper_hyperparameters(benchmark, PlannerKind::Adam).expect("table row");
        // Desk scale: narrow nets keep a cart-pole episode near a minute on one core.
        let hidden = vec![32, 32, 32];
        let mut cfg = Self {
            env_id: env_id.to_string(),
            seed: 0,
            episodes: 15,
            random_episodes: 1,
            model: DynamicsConfig {
                hidden: hidden.clone(),
                epochs: 100,
                batch_size: 32,
                lr: 1e-3,
                ..DynamicsConfig::default()
            },
            model_warm_start: true,
            regularizer: RegularizerKind::Dae,
            dae: DaeConfig {
                hidden,
                sigma: paper.dae_sigma,
                window: 1,
                epochs: 100,
                batch_size: 32,
                lr: 1e-3,
                seed: 0,
            },
            mpc: MpcConfig {
                planner: PlannerKind::Cem,
                horizon: planning_horizon(benchmark).expect("table row"),
                cem: CemConfig {
                    iterations: paper.optim_iters,
                    ..CemConfig::default()
                },
                adam: GradPlanConfig {
                    iterations: paper_adam.optim_iters,
                    lr: paper_adam.adam_lr.expect("adam row"),
                    ..GradPlanConfig::default()
                },
                alpha: paper.alpha,
                ..MpcConfig::default()
            },
            record_wall_time: false,
        };
        if env_id == "reactor" {
            cfg.dae.window = PROCESS_DAE_WINDOW;
            cfg.dae.sigma = PROCESS_DAE_SIGMA;
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !ENV_IDS.contains(&self.env_id.as_str()) {
            return Err(Error::config(
                "env.id",
                format!("unknown environment `{}`", self.env_id),
            ));
        }
        if self.random_episodes == 0 {
            return Err(Error::config(
                "run.random_episodes",
                "at least one seeding episode is needed",
            ));
        }
        if self.episodes < self.random_episodes {
            return Err(Error::config("run.episodes", "must be at least run.random_episodes"));
        }
        let positive = [
            ("model.epochs", self.model.epochs),
            ("model.batch", self.model.batch_size),
            ("dae.epochs", self.dae.epochs),
            ("dae.batch", self.dae.batch_size),
            ("dae.window", self.dae.window),
        ];
        for (field, v) in positive {
            if v == 0 {
                return Err(Error::config(field, "must be at least 1"));
            }
        }
        if self.model.hidden.is_empty() || self.model.hidden.contains(&0) {
            return Err(Error::config("model.hidden", "need one or more non-zero layer widths"));
        }
        if self.dae.hidden.contains(&0) {
            return Err(Error::config("dae.hidden", "layer widths must be non-zero"));
        }
        if !(self.model.lr > 0.0) {
            return Err(Error::config("model.lr", "must be positive"));
        }
        if !(self.dae.lr > 0.0) {
            return Err(Error::config("dae.lr", "must be positive"));
        }
        if !(self.dae.sigma > 0.0) {
            return Err(Error::config("dae.sigma", "must be positive"));
        }
        if !(self.model.log_var_min < self.model.log_var_max) {
            return Err(Error::config("model.log_var_min", "must be below model.log_var_max"));
        }
        self.mpc.validate()
    }

    /// Parses `key = value` text. `env.id` is required and selects the defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Format {
                what: "config".into(),
                message: format!("line {}: expected `key = value`", n + 1),
            })?;
            let (k, v) = (k.trim().to_string(), v.trim().to_string());
            if entries.insert(k.clone(), v).is_some() {
                return Err(Error::config(k, "given more than once"));
            }
        }
        let env_id = entries
            .remove("env.id")
            .ok_or_else(|| Error::config("env.id", "missing; name one of the built-in environments"))?;
        let mut cfg = Self::for_env(&env_id)?;
        for (k, v) in &entries {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Sets one dotted key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse().map_err(|_| Error::config(key, format!("cannot parse `{v}`")))
        }
        fn flag(key: &str, v: &str) -> Result<bool> {
            match v {
                "true" | "yes" | "1" => Ok(true),
                "false" | "no" | "0" => Ok(false),
                _ => Err(Error::config(key, format!("expected true or false, got `{v}`"))),
            }
        }
        fn widths(key: &str, v: &str) -> Result<Vec<usize>> {
            if v.trim().is_empty() {
                return Ok(Vec::new());
            }
            v.split(',').map(|w| num(key, w.trim())).collect()
        }
        let k = key;
        match k {
            "env.id" => {
                let fresh = Self::for_env(value)?;
                *self = Self {
                    seed: self.seed,
                    ..fresh
                };
            }
            "run.seed" => self.seed = num(k, value)?,
            "run.episodes" => self.episodes = num(k, value)?,
            "run.random_episodes" => self.random_episodes = num(k, value)?,
            "run.record_wall_time" => self.record_wall_time = flag(k, value)?,
            "model.hidden" => self.model.hidden = widths(k, value)?,
            "model.epochs" => self.model.epochs = num(k, value)?,
            "model.batch" => self.model.batch_size = num(k, value)?,
            "model.lr" => self.model.lr = num(k, value)?,
            "model.warm_start" => self.model_warm_start = flag(k, value)?,
            "model.log_var_min" => self.model.log_var_min = num(k, value)?,
            "model.log_var_max" => self.model.log_var_max = num(k, value)?,
            "dae.hidden" => self.dae.hidden = widths(k, value)?,
            "dae.sigma" => self.dae.sigma = num(k, value)?,
            "dae.window" => self.dae.window = num(k, value)?,
            "dae.epochs" => self.dae.epochs = num(k, value)?,
            "dae.batch" => self.dae.batch_size = num(k, value)?,
            "dae.lr" => self.dae.lr = num(k, value)?,
            "planner.kind" => self.mpc.planner = value.parse()?,
            "planner.regularizer" => self.regularizer = value.parse()?,
            "planner.alpha" => self.mpc.alpha = num(k, value)?,
            "planner.stop_gradient" => self.mpc.stop_gradient = flag(k, value)?,
            "cem.population" => self.mpc.cem.population = num(k, value)?,
            "cem.elites" => self.mpc.cem.elites = num(k, value)?,
            "cem.iterations" => self.mpc.cem.iterations = num(k, value)?,
            "cem.init_std_fraction" => self.mpc.cem.init_std_fraction = num(k, value)?,
            "cem.std_floor" => self.mpc.cem.std_floor = num(k, value)?,
            "cem.smoothing" => self.mpc.cem.smoothing = num(k, value)?,
            "adam.iterations" => self.mpc.adam.iterations = num(k, value)?,
            "adam.lr" => self.mpc.adam.lr = num(k, value)?,
            "adam.restarts" => self.mpc.adam.restarts = num(k, value)?,
            "adam.warm_start" => self.mpc.adam.warm_start = value.parse::<WarmStart>()?,
            "mpc.horizon" => self.mpc.horizon = num(k, value)?,
            "mpc.noise_std" => self.mpc.noise_std = num(k, value)?,
            "mpc.warm_start" => self.mpc.warm_start = flag(k, value)?,
            "mpc.shift_fill" => self.mpc.shift_fill = value.parse::<ShiftFill>()?,
            other => return Err(Error::config(other, "unknown key")),
        }
        Ok(())
    }

    /// Every key in canonical order; `parse(to_kv())` round-trips.
    pub fn to_kv(&self) -> String {
        let list = |v: &[usize]| v.iter().map(usize::to_string).collect::<Vec<_>>().join(",");
        let fill = match self.mpc.shift_fill {
            ShiftFill::Zeros => "zeros",
            ShiftFill::RepeatLast => "repeat-last",
            ShiftFill::Resample => "resample",
        };
        let m = &self.mpc;
        let lines = [
            ("env.id", self.env_id.clone()),
            ("run.seed", self.seed.to_string()),
            ("run.episodes", self.episodes.to_string()),
            ("run.random_episodes", self.random_episodes.to_string()),
            ("run.record_wall_time", self.record_wall_time.to_string()),
            ("model.hidden", list(&self.model.hidden)),
            ("model.epochs", self.model.epochs.to_string()),
            ("model.batch", self.model.batch_size.to_string()),
            ("model.lr", format!("{:?}", self.model.lr)),
            ("model.warm_start", self.model_warm_start.to_string()),
            ("model.log_var_min", format!("{:?}", self.model.log_var_min)),
            ("model.log_var_max", format!("{:?}", self.model.log_var_max)),
            ("dae.hidden", list(&self.dae.hidden)),
            ("dae.sigma", format!("{:?}", self.dae.sigma)),
            ("dae.window", self.dae.window.to_string()),
            ("dae.epochs", self.dae.epochs.to_string()),
            ("dae.batch", self.dae.batch_size.to_string()),
            ("dae.lr", format!("{:?}", self.dae.lr)),
            ("planner.kind", m.planner.to_string()),
            ("planner.regularizer", self.regularizer.to_string()),
            ("planner.alpha", format!("{:?}", m.alpha)),
            ("planner.stop_gradient", m.stop_gradient.to_string()),
            ("cem.population", m.cem.population.to_string()),
            ("cem.elites", m.cem.elites.to_string()),
            ("cem.iterations", m.cem.iterations.to_string()),
            ("cem.init_std_fraction", format!("{:?}", m.cem.init_std_fraction)),
            ("cem.std_floor", format!("{:?}", m.cem.std_floor)),
            ("cem.smoothing", format!("{:?}", m.cem.smoothing)),
            ("adam.iterations", m.adam.iterations.to_string()),
            ("adam.lr", format!("{:?}", m.adam.lr)),
            ("adam.restarts", m.adam.restarts.to_string()),
            ("adam.warm_start", m.adam.warm_start.to_string()),
            ("mpc.horizon", m.horizon.to_string()),
            ("mpc.noise_std", format!("{:?}", m.noise_std)),
            ("mpc.warm_start", m.warm_start.to_string()),
            ("mpc.shift_fill", fill.to_string()),
        ];
        lines.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn missing_env_id_names_the_field() {
        let err = RunConfig::parse("run.episodes = 3\n").unwrap_err();
        assert!(
            matches!(&err, Error::InvalidConfig { field, .. } if field == "env.id"),
            "{err}"
        );
    }

    #[test]
    fn parses_and_round_trips() {
        let cfg = RunConfig::parse(
            "env.id = reacher2d # the point mass\nplanner.kind = adam\nplanner.alpha = 0.5\nmodel.hidden = 16, 16\nadam.warm_start = cem:2\n",
        )
        .unwrap();
        assert_eq!(cfg.mpc.planner, PlannerKind::Adam);
        assert_eq!(cfg.mpc.alpha, 0.5);
        assert_eq!(cfg.model.hidden, vec![16, 16]);
        assert_eq!(cfg.mpc.adam.warm_start, WarmStart::CemInit(2));
        assert_eq!(RunConfig::parse(&cfg.to_kv()).unwrap(), cfg);
    }

    #[test]
    fn field_level_errors() {
        for (text, field) in [
            ("env.id = cartpole\nmpc.horizon = 0", "mpc.horizon"),
            ("env.id = cartpole\ncem.elites = 1000", "cem.elites"),
            ("env.id = cartpole\nplanner.alpha = -1", "planner.alpha"),
            ("env.id = cartpole\nbogus.key = 1", "bogus.key"),
            ("env.id = cartpole\ndae.sigma = x", "dae.sigma"),
            ("env.id = mujoco", "env.id"),
            ("env.id = cartpole\nrun.episodes = 0", "run.episodes"),
        ] {
            match RunConfig::parse(text) {
                Err(Error::InvalidConfig { field: f, .. }) => assert_eq!(f, field, "{text}"),
                other => panic!("{text}: {other:?}"),
            }
        }
    }

    #[test]
    fn env_defaults() {
        let c = RunConfig::for_env("cartpole").unwrap();
        assert_eq!(
            (c.mpc.horizon, c.mpc.cem.iterations, c.mpc.alpha, c.dae.sigma),
            (25, 5, 0.001, 0.1)
        );
        let r = RunConfig::for_env("reactor").unwrap();
        assert_eq!((r.dae.window, r.dae.sigma), (5, 0.03));
    }
}
