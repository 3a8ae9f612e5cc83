//! Experiment configuration files.
//!
//! The format is TOML: flat `key = value` pairs grouped in sections.
//! Every key is optional and falls back to the 480-unit reference setting;
//! unknown keys are errors. See `configs/reference.toml` for a complete
//! annotated file.
//!
//! ```toml
//! scheme = "imsac_ma"        # imsac_ma | imsac | greedy
//! seeds = [1, 2, 3]
//! output_dir = "out"
//!
//! [system]
//! function_types = 9         # K
//! functions_per_slice = 3    # F
//! sharing_cap = 5            # N_L
//! capacity = [12, 12, 12]    # function-units per resource type
//! per_function_demand = [1, 1, 1]
//! reward_weights = [0.1, 0.1, 0.1]
//! event_sampling = "embedded"  # embedded | uniformized
//!
//! # Physical units instead of `capacity` (not both):
//! # [system.physical]
//! # capacity = [480.0, 480.0, 480.0]
//! # per_function = [40.0, 40.0, 40.0]
//!
//! [[classes]]                # one table per class, ids are 1, 2, ...
//! income = 1.0
//! arrival_rate = 60.0        # per hour
//! departure_rate = 2.0       # per hour
//!
//! [trainer]
//! total_steps = 375000
//! epsilon_start = 1.0
//! epsilon_end = 0.001
//! epsilon_decay_fraction = 0.5
//! discount = 0.9
//! learning_rate = 0.001
//! target_sync = 10000
//! batch_size = 32
//! replay_capacity = 100000
//! warmup = 1000
//! # grad_clip = 10.0
//! trunk = [64, 64]
//! stream_hidden = 32
//!
//! [experiment]
//! log_interval = 5000        # decision epochs per metrics row
//! eval_horizon = 10000       # decision epochs of post-training evaluation
//! ```

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::agent::TrainerConfig;
use crate::env::{EnvConfig, EventSampling, RewardConfig};
use crate::error::Error;
use crate::resources::{ClassParams, ResourceVector};

/// Which admission scheme to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// Learned admission with function sharing.
    ImsacMa,
    /// Learned admission, no sharing.
    Imsac,
    /// Accept whenever the request fits, no sharing.
    Greedy,
}

impl Scheme {
    pub const ALL: [Scheme; 3] = [Scheme::ImsacMa, Scheme::Imsac, Scheme::Greedy];

    pub fn sharing_enabled(self) -> bool {
        matches!(self, Scheme::ImsacMa)
    }

    pub fn is_learned(self) -> bool {
        !matches!(self, Scheme::Greedy)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Scheme::ImsacMa => "imsac_ma",
            Scheme::Imsac => "imsac",
            Scheme::Greedy => "greedy",
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "imsac_ma" => Ok(Scheme::ImsacMa),
            "imsac" => Ok(Scheme::Imsac),
            "greedy" => Ok(Scheme::Greedy),
            _ => Err(Error::Config(format!(
                "unknown scheme {s:?} (expected imsac_ma, imsac or greedy)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawConfig {
    scheme: Scheme,
    seeds: Vec<u64>,
    output_dir: PathBuf,
    system: RawSystem,
    classes: Vec<RawClass>,
    trainer: RawTrainer,
    experiment: RawExperiment,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawSystem {
    function_types: i64,
    functions_per_slice: i64,
    sharing_cap: i64,
    capacity: Option<Vec<i64>>,
    per_function_demand: Option<Vec<i64>>,
    reward_weights: Vec<f64>,
    event_sampling: RawSampling,
    physical: Option<RawPhysical>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
enum RawSampling {
    Embedded,
    Uniformized,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPhysical {
    capacity: Vec<f64>,
    per_function: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawClass {
    income: f64,
    arrival_rate: f64,
    departure_rate: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawTrainer {
    total_steps: u64,
    epsilon_start: f64,
    epsilon_end: f64,
    epsilon_decay_fraction: f64,
    discount: f64,
    learning_rate: f64,
    target_sync: u64,
    batch_size: usize,
    replay_capacity: usize,
    warmup: usize,
    grad_clip: Option<f64>,
    trunk: Vec<usize>,
    stream_hidden: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawExperiment {
    log_interval: u64,
    eval_horizon: u64,
}

impl Default for RawConfig {
    fn default() -> Self {
        RawConfig {
            scheme: Scheme::ImsacMa,
            seeds: vec![1],
            output_dir: PathBuf::from("out"),
            system: RawSystem::default(),
            classes: vec![
                RawClass {
                    income: 1.0,
                    arrival_rate: 60.0,
                    departure_rate: 2.0,
                },
                RawClass {
                    income: 2.0,
                    arrival_rate: 40.0,
                    departure_rate: 2.0,
                },
                RawClass {
                    income: 4.0,
                    arrival_rate: 25.0,
                    departure_rate: 2.0,
                },
            ],
            trainer: RawTrainer::default(),
            experiment: RawExperiment::default(),
        }
    }
}

impl Default for RawSystem {
    fn default() -> Self {
        RawSystem {
            function_types: 9,
            functions_per_slice: 3,
            sharing_cap: 5,
            capacity: None,
            per_function_demand: None,
            reward_weights: vec![0.1; 3],
            event_sampling: RawSampling::Embedded,
            physical: None,
        }
    }
}

impl Default for RawTrainer {
    fn default() -> Self {
        let t = TrainerConfig::default();
        RawTrainer {
            total_steps: t.total_steps,
            epsilon_start: t.epsilon_start,
            epsilon_end: t.epsilon_end,
            epsilon_decay_fraction: t.epsilon_decay_fraction,
            discount: t.discount,
            learning_rate: t.learning_rate,
            target_sync: t.target_sync,
            batch_size: t.batch_size,
            replay_capacity: t.replay_capacity,
            warmup: t.warmup,
            grad_clip: t.grad_clip,
            trunk: t.trunk,
            stream_hidden: t.stream_hidden,
        }
    }
}

impl Default for RawExperiment {
    fn default() -> Self {
        RawExperiment {
            log_interval: 5_000,
            eval_horizon: 10_000,
        }
    }
}

/// A validated experiment description.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    /// System parameters. `sharing_enabled` here is overridden per scheme.
    pub env: EnvConfig,
    pub trainer: TrainerConfig,
    pub scheme: Scheme,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    pub log_interval: u64,
    pub eval_horizon: u64,
    digest: String,
}

fn positive(name: &str, v: i64) -> Result<u32, Error> {
    if v <= 0 {
        return Err(Error::Config(format!("{name} must be positive, got {v}")));
    }
    u32::try_from(v).map_err(|_| Error::Config(format!("{name} is too large: {v}")))
}

fn positive_units(name: &str, values: &[i64]) -> Result<ResourceVector, Error> {
    if values.is_empty() {
        return Err(Error::Config(format!("{name} needs at least one resource type")));
    }
    values
        .iter()
        .map(|&v| positive(name, v))
        .collect::<Result<Vec<_>, _>>()
        .map(ResourceVector::new)
}

impl ExperimentConfig {
    /// The 480-unit reference setting with default trainer parameters.
    pub fn reference() -> Self {
        Self::from_raw(RawConfig::default()).expect("reference config is valid")
    }

    pub fn parse(text: &str) -> Result<Self, Error> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        Self::from_raw(raw)
    }

    pub fn load(path: &Path) -> Result<Self, Error> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    fn from_raw(raw: RawConfig) -> Result<Self, Error> {
        let s = &raw.system;
        let function_types = positive("system.function_types", s.function_types)? as usize;
        let functions_per_slice = positive("system.functions_per_slice", s.functions_per_slice)? as usize;
        let sharing_cap = positive("system.sharing_cap", s.sharing_cap)?;
        if functions_per_slice > function_types {
            return Err(Error::Config(format!(
                "functions_per_slice ({functions_per_slice}) exceeds function_types ({function_types})"
            )));
        }

        let (capacity, per_function_demand) = match (&s.physical, &s.capacity) {
            (Some(_), Some(_)) => {
                return Err(Error::Config(
                    "give either system.capacity or system.physical, not both".into(),
                ))
            }
            (Some(p), None) => {
                if s.per_function_demand.is_some() {
                    return Err(Error::Config(
                        "system.per_function_demand cannot be combined with system.physical".into(),
                    ));
                }
                if p.capacity.is_empty() || p.capacity.len() != p.per_function.len() {
                    return Err(Error::Config(
                        "system.physical capacity and per_function must have equal, non-zero length".into(),
                    ));
                }
                let mut units = Vec::with_capacity(p.capacity.len());
                for (&c, &f) in p.capacity.iter().zip(&p.per_function) {
                    if !(c > 0.0 && f > 0.0 && c.is_finite() && f.is_finite()) {
                        return Err(Error::Config(
                            "physical capacities and requirements must be positive".into(),
                        ));
                    }
                    let u = (c / f + 1e-9).floor();
                    if u < 1.0 {
                        return Err(Error::Config(format!("capacity {c} holds no function requiring {f}")));
                    }
                    units.push(u as u32);
                }
                let p_types = units.len();
                (ResourceVector::new(units), ResourceVector::splat(p_types, 1))
            }
            (None, cap) => {
                let cap = positive_units("system.capacity", cap.as_deref().unwrap_or(&[12, 12, 12]))?;
                let demand = match &s.per_function_demand {
                    Some(d) => positive_units("system.per_function_demand", d)?,
                    None => ResourceVector::splat(cap.len(), 1),
                };
                (cap, demand)
            }
        };
        let p = capacity.len();
        if per_function_demand.len() != p {
            return Err(Error::Config(format!(
                "per_function_demand has {} entries, capacity has {p}",
                per_function_demand.len()
            )));
        }
        if s.reward_weights.len() != p {
            return Err(Error::Config(format!(
                "reward_weights has {} entries, capacity has {p}",
                s.reward_weights.len()
            )));
        }
        if s.reward_weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::Config("reward weights must be non-negative".into()));
        }
        if raw.classes.is_empty() {
            return Err(Error::Config("at least one [[classes]] entry is required".into()));
        }
        let mut classes = Vec::with_capacity(raw.classes.len());
        for (i, c) in raw.classes.iter().enumerate() {
            let g = i + 1;
            for (name, v) in [
                ("income", c.income),
                ("arrival_rate", c.arrival_rate),
                ("departure_rate", c.departure_rate),
            ] {
                if !(v > 0.0 && v.is_finite()) {
                    return Err(Error::Config(format!("class {g}: {name} must be positive, got {v}")));
                }
            }
            classes.push(ClassParams::new(g, c.income, c.arrival_rate, c.departure_rate));
        }

        let env = EnvConfig {
            classes,
            function_types,
            functions_per_slice,
            sharing_cap,
            capacity,
            per_function_demand,
            reward: RewardConfig {
                weights: s.reward_weights.clone(),
            },
            sharing_enabled: raw.scheme.sharing_enabled(),
            sampling: match s.event_sampling {
                RawSampling::Embedded => EventSampling::Embedded,
                RawSampling::Uniformized => EventSampling::Uniformized,
            },
        };
        env.validate().map_err(|e| Error::Config(e.to_string()))?;

        let t = &raw.trainer;
        let trainer = TrainerConfig {
            epsilon_start: t.epsilon_start,
            epsilon_end: t.epsilon_end,
            epsilon_decay_fraction: t.epsilon_decay_fraction,
            discount: t.discount,
            learning_rate: t.learning_rate,
            target_sync: t.target_sync,
            batch_size: t.batch_size,
            replay_capacity: t.replay_capacity,
            warmup: t.warmup,
            total_steps: t.total_steps,
            grad_clip: t.grad_clip,
            trunk: t.trunk.clone(),
            stream_hidden: t.stream_hidden,
        };
        trainer.validate().map_err(|e| Error::Config(e.to_string()))?;

        if raw.seeds.is_empty() {
            return Err(Error::Config("seeds must not be empty".into()));
        }
        if raw.experiment.log_interval == 0 || raw.experiment.eval_horizon == 0 {
            return Err(Error::Config("log_interval and eval_horizon must be positive".into()));
        }

        let canonical = toml::to_string(&raw).map_err(|e| Error::Config(e.to_string()))?;
        let digest = Sha256::digest(canonical.as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect();

        Ok(ExperimentConfig {
            env,
            trainer,
            scheme: raw.scheme,
            seeds: raw.seeds,
            output_dir: raw.output_dir,
            log_interval: raw.experiment.log_interval,
            eval_horizon: raw.experiment.eval_horizon,
            digest,
        })
    }

    /// SHA-256 of the normalized configuration (defaults filled in).
    pub fn digest(&self) -> &str {
        &self.digest
    }

    /// System parameters with sharing set for `scheme`.
    pub fn env_for(&self, scheme: Scheme) -> EnvConfig {
        let mut env = self.env.clone();
        env.sharing_enabled = scheme.sharing_enabled();
        env
    }

    /// Copy of this config with `units` function instances worth of every
    /// resource type.
    pub fn with_function_capacity(&self, units: u32) -> Self {
        let mut cfg = self.clone();
        cfg.env.capacity = cfg.env.per_function_demand.scaled(units);
        cfg
    }

    pub fn max_concurrent_slices(&self) -> u32 {
        self.env.max_concurrent_slices()
    }

    pub fn uniformization_rate(&self) -> f64 {
        self.env.uniformization_rate()
    }
}
