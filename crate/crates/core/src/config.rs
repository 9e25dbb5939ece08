//! Experiment configuration: a TOML key-value file, dotted-key overrides
//! and a stable content hash.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::digits::DigitsOptions;
use crate::error::{Error, Result};
use crate::reservoir::ReservoirConfig;
use crate::tasks::{CapacityProtocol, ScoreOptions};

/// Hex SHA-256 (first 16 hex digits) of the canonical JSON serialization.
pub fn config_hash<T: Serialize>(value: &T) -> String {
    let canonical = serde_json::to_string(value).expect("config serializes to JSON");
    let digest = Sha256::digest(canonical.as_bytes());
    hex::encode(&digest[..8])
}

/// Everything a command needs to reproduce its results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub reservoir: ReservoirConfig,
    pub protocol: CapacityProtocol,
    pub readout: ScoreOptions,
    pub digits: DigitsOptions,
    /// Number of weight seeds in a sweep, counted up from `reservoir.seed`.
    pub seeds: usize,
    /// When non-zero, a sweep keeps the weights of `reservoir.seed` and
    /// redraws device variation this many times instead of sweeping seeds.
    pub variation_draws: usize,
    /// Worker threads; 0 picks one per core.
    pub workers: usize,
    pub output: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            reservoir: ReservoirConfig::default(),
            protocol: CapacityProtocol::default(),
            readout: ScoreOptions::default(),
            digits: DigitsOptions::default(),
            seeds: 1,
            variation_draws: 0,
            workers: 0,
            output: PathBuf::from("out"),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: ExperimentConfig = toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes to TOML")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::InvalidConfig(reason) => Error::malformed(path, reason),
            other => other,
        })
    }

    /// Writes the resolved configuration, typically next to the outputs.
    pub fn save(&self, path: &Path) -> Result<()> {
        crate::export::write_atomic(path, self.to_toml_string().as_bytes())
    }

    /// Hash of everything that can change results; the worker count and
    /// output directory are left out.
    pub fn hash(&self) -> String {
        let defaults = ExperimentConfig::default();
        config_hash(&ExperimentConfig {
            workers: defaults.workers,
            output: defaults.output,
            ..self.clone()
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.reservoir.validate()?;
        self.protocol.validate()?;
        self.digits.validate()?;
        if self.seeds == 0 {
            return Err(Error::InvalidConfig("seeds must be at least 1".into()));
        }
        Ok(())
    }

    /// Weight seeds of a sweep.
    pub fn seed_list(&self) -> Vec<u64> {
        (0..self.seeds as u64).map(|k| self.reservoir.seed.wrapping_add(k)).collect()
    }

    /// Reservoir configurations of a sweep: one per weight seed, or one per
    /// variation draw on fixed weights when `variation_draws > 0`.
    pub fn sweep(&self) -> Vec<ReservoirConfig> {
        let base = &self.reservoir;
        if self.variation_draws > 0 {
            let first = base.variation_seed.unwrap_or(base.seed);
            (0..self.variation_draws as u64)
                .map(|k| ReservoirConfig {
                    variation_seed: Some(first.wrapping_add(k)),
                    ..base.clone()
                })
                .collect()
        } else {
            self.seed_list()
                .into_iter()
                .map(|seed| ReservoirConfig { seed, ..base.clone() })
                .collect()
        }
    }

    /// Sets one field by dotted key, e.g. `reservoir.variation_std=0.3`.
    /// The value is parsed as a TOML value, falling back to a plain string.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let mut root = toml::Value::try_from(&*self).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        let parsed = parse_value(value);
        let mut slot = &mut root;
        for part in key.split('.') {
            let table = slot
                .as_table_mut()
                .ok_or_else(|| Error::InvalidConfig(format!("{key}: {part} is not inside a table")))?;
            slot = table.entry(part.to_string()).or_insert(toml::Value::Boolean(false));
        }
        *slot = parsed;
        let updated: ExperimentConfig = root
            .try_into()
            .map_err(|e: toml::de::Error| Error::InvalidConfig(format!("{key}={value}: {e}")))?;
        updated.validate()?;
        *self = updated;
        Ok(())
    }

    /// Applies `key=value` assignments in order.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, assignments: &[S]) -> Result<()> {
        for a in assignments {
            let a = a.as_ref();
            let (key, value) = a
                .split_once('=')
                .ok_or_else(|| Error::InvalidConfig(format!("override {a:?} is not key=value")))?;
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }
}

fn parse_value(text: &str) -> toml::Value {
    let doc = format!("v = {text}");
    match toml::from_str::<toml::Table>(&doc) {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(text.into())),
        Err(_) => toml::Value::String(text.into()),
    }
}
