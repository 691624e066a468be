//! Run configuration: one JSON document covering data, model, optimizer
//! and output, resolved as built-in defaults, then the config file, then
//! the `PATHMATCH_SEED` environment variable, then command-line overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::data::SynthConfig;
use crate::error::{Error, Result};
use crate::metrics::RelaImprMode;
use crate::model::{ModelConfig, TrainConfig, Variant};

pub const SEED_ENV: &str = "PATHMATCH_SEED";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub synth: SynthConfig,
    /// Held-out synthetic users generated for the test split.
    pub test_users: usize,
    /// Most recent events kept per user.
    pub t_max: usize,
    /// Negatives per positive when assembling examples from event logs.
    pub neg_ratio: usize,
    /// Share of ingested users routed to the test split.
    pub test_fraction: f64,
    /// Directory holding `train.jsonl` and `test.jsonl`.
    pub data_dir: Option<PathBuf>,
    pub out_dir: PathBuf,
    /// Seeds model initialization, shuffling and augmentation masks.
    pub seed: u64,
    /// Seeds repeated by `ablate`; empty means just `seed`.
    pub ablation_seeds: Vec<u64>,
    pub eval_batch: usize,
    pub relaimpr_mode: RelaImprMode,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            synth: SynthConfig::default(),
            test_users: 2000,
            t_max: 256,
            neg_ratio: 1,
            test_fraction: 0.2,
            data_dir: None,
            out_dir: PathBuf::from("runs"),
            seed: 0,
            ablation_seeds: Vec::new(),
            eval_batch: 256,
            relaimpr_mode: RelaImprMode::Ratio,
        }
    }
}

impl RunConfig {
    /// The synthetic setup used by the acceptance experiments: a larger
    /// initialization scale so the multiplicative path scores start away
    /// from zero, a single shared user row (user ids carry no signal for
    /// held-out users), one item per category, and long enough training
    /// for path matching to take hold.
    pub fn synthetic_experiment() -> Self {
        let mut c = Self::default();
        c.model.init_std = 0.1;
        c.model.vocab.users = 2;
        c.synth.n_items = c.synth.n_categories;
        c.train.epochs = 12;
        c
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        self.synth.validate()?;
        if self.t_max < self.model.l {
            return Err(Error::Config("t_max must be at least l".into()));
        }
        if self.neg_ratio < 1 {
            return Err(Error::Config("neg_ratio must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.test_fraction) {
            return Err(Error::Config("test_fraction must be in [0, 1)".into()));
        }
        if self.test_users < 1 || self.eval_batch < 1 {
            return Err(Error::Config("test_users and eval_batch must be >= 1".into()));
        }
        Ok(())
    }

    /// Model configuration of one ablation variant.
    pub fn model_for(&self, variant: Variant) -> ModelConfig {
        self.model.clone().with_variant(variant)
    }

    /// Training configuration with the run seed applied.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.train.clone()
        }
    }

    pub fn to_value(&self) -> Result<Value> {
        Ok(serde_json::to_value(self)?)
    }

    /// Resolve defaults, the optional file, the seed variable and
    /// `key=value` overrides (dotted keys, JSON or bare-string values).
    pub fn resolve(file: Option<&Path>, env_seed: Option<&str>, overrides: &[String]) -> Result<Self> {
        let mut value = serde_json::to_value(Self::default())?;
        if let Some(path) = file {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            let file_value: Value = serde_json::from_str(&text)
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            if !file_value.is_object() {
                return Err(Error::Config(format!("{}: expected a JSON object", path.display())));
            }
            merge(&mut value, file_value);
        }
        if let Some(seed) = env_seed {
            let seed: u64 = seed
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("{SEED_ENV}={seed:?} is not an unsigned integer")))?;
            value["seed"] = seed.into();
        }
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        let cfg: Self = serde_json::from_value(value).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Recursively overlay `top` onto `base`; objects merge, anything else
/// replaces.
pub fn merge(base: &mut Value, top: Value) {
    match (base, top) {
        (Value::Object(b), Value::Object(t)) => {
            for (k, v) in t {
                merge(b.entry(k).or_insert(Value::Null), v);
            }
        }
        (b, t) => *b = t,
    }
}

/// Apply one `a.b.c=value` override.
pub fn apply_override(value: &mut Value, spec: &str) -> Result<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {spec:?} is not key=value")))?;
    let parsed: Value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut slot = value;
    for part in key.split('.') {
        let obj = slot
            .as_object_mut()
            .ok_or_else(|| Error::Config(format!("override {key:?}: {part:?} is not inside an object")))?;
        slot = obj
            .get_mut(part)
            .ok_or_else(|| Error::Config(format!("override {key:?}: unknown field {part:?}")))?;
    }
    *slot = parsed;
    Ok(())
}
