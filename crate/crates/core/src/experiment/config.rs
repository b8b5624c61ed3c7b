//! Lab configuration: one JSON document covering data, training,
//! evaluation, sweep grids and check thresholds.

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::metrics::EvalConfig;
use crate::taskgen::{hex, GeneratorConfig};
use crate::train::{DivergenceKind, TrainConfig};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepGrids {
    pub lambda: Vec<f64>,
    pub noise: Vec<f64>,
    pub divergence: Vec<DivergenceKind>,
    pub depth: Vec<usize>,
}

impl Default for SweepGrids {
    fn default() -> Self {
        Self {
            lambda: vec![0.1, 0.3, 0.5, 0.7, 1.0],
            noise: vec![0.0, 0.2, 0.5],
            divergence: DivergenceKind::ALL.to_vec(),
            depth: vec![1, 2, 3],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CheckConfig {
    pub noisy_flip_rates: Vec<f64>,
    pub noisy_samples: usize,
    pub dominance_samples: usize,
    pub bootstrap_resamples: usize,
    /// Accuracy below which the dominance check refuses to run.
    pub dominance_min_accuracy: f64,
    pub shortcut_lambda: f64,
    pub shortcut_min_cos_gain: f64,
    pub shortcut_max_accuracy_drop: f64,
    pub editor_min_cos_gain: f64,
    /// Seeds needed before ordering verdicts are emitted.
    pub min_seeds_for_verdict: usize,
}

impl Default for CheckConfig {
    fn default() -> Self {
        Self {
            noisy_flip_rates: vec![0.0, 0.15, 0.3],
            noisy_samples: 5000,
            dominance_samples: 1000,
            bootstrap_resamples: 1000,
            dominance_min_accuracy: 0.9,
            shortcut_lambda: 0.5,
            shortcut_min_cos_gain: 0.30,
            shortcut_max_accuracy_drop: 0.05,
            editor_min_cos_gain: 0.05,
            min_seeds_for_verdict: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LabConfig {
    /// Generator settings; the seed is replaced per run seed.
    pub generator: GeneratorConfig,
    pub train_size: usize,
    pub eval_size: usize,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub grids: SweepGrids,
    pub checks: CheckConfig,
}

impl Default for LabConfig {
    fn default() -> Self {
        Self {
            generator: GeneratorConfig::default(),
            train_size: 5000,
            eval_size: 1000,
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
            grids: SweepGrids::default(),
            checks: CheckConfig::default(),
        }
    }
}

impl LabConfig {
    pub fn from_json_str(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Config(format!("config: {e}")))
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json_str(&text)
    }

    /// Applies `key=value` overrides. Keys are dotted paths into the JSON
    /// form (`train.lambda`); values parse as JSON and otherwise as strings.
    pub fn with_overrides<S: AsRef<str>>(&self, overrides: &[S]) -> Result<Self> {
        let mut doc = serde_json::to_value(self)?;
        for o in overrides {
            let o = o.as_ref();
            let (key, raw) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override `{o}` is not key=value")))?;
            let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
            set_path(&mut doc, key, value)?;
        }
        let cfg: LabConfig =
            serde_json::from_value(doc).map_err(|e| Error::Config(format!("after overrides: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.generator.validate()?;
        self.train.validate()?;
        if self.train_size == 0 || self.eval_size == 0 {
            return Err(Error::Config("train_size and eval_size must be positive".into()));
        }
        if !(self.eval.k_ratio > 0.0 && self.eval.k_ratio <= 1.0) || self.eval.bins == 0 {
            return Err(Error::Config("eval.k_ratio must lie in (0, 1] and eval.bins be positive".into()));
        }
        Ok(())
    }

    pub fn hash(&self) -> String {
        hex(&Sha256::digest(serde_json::to_vec(self).expect("serializes")))
    }
}

fn set_path(doc: &mut Value, key: &str, value: Value) -> Result<()> {
    let mut cur = doc;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = cur
            .as_object_mut()
            .ok_or_else(|| Error::Config(format!("`{key}`: `{part}` is not inside an object")))?;
        if !obj.contains_key(*part) {
            return Err(Error::Config(format!("unknown config key `{key}`")));
        }
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        cur = obj.get_mut(*part).expect("checked above");
    }
    Err(Error::Config("empty override key".into()))
}
