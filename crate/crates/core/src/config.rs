//! Versioned experiment configuration (TOML).
//!
//! Every field has a default, so an empty file is a valid configuration.
//! Unknown keys are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::ModelConfig;
use crate::simkit::SimConfig;
use crate::train::{LossConfig, TrainSchedule};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("config parse: {0}")]
    Parse(String),
    #[error("config version {found} is not supported (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub sequences: usize,
    /// Leading fraction of sequences used for training; the rest is the
    /// test set.
    pub train_fraction: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self { sequences: 20, train_fraction: 0.7 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Rollout seeds; each seed re-draws every stochastic decision.
    pub seeds: Vec<u64>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { seeds: (0..5).collect() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    /// λ values as fractions of the warm-up final pose loss.
    pub ladder: Vec<f64>,
    /// Ladder index of the model used for baseline comparison and behavior
    /// analysis.
    pub reference: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self { ladder: vec![0.03, 0.1, 0.3, 1.0], reference: 2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    /// Master seed: dataset, initialization and training streams.
    pub seed: u64,
    pub sim: SimConfig,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub loss: LossConfig,
    pub schedule: TrainSchedule,
    pub eval: EvalConfig,
    pub sweep: SweepConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            version: CONFIG_VERSION,
            seed: 7,
            // Long enough for 800 m evaluation segments at cruising speed.
            sim: SimConfig { duration_s: 120.0, ..SimConfig::default() },
            data: DataConfig::default(),
            model: ModelConfig::default(),
            loss: LossConfig::default(),
            schedule: TrainSchedule::default(),
            eval: EvalConfig::default(),
            sweep: SweepConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        if cfg.version != CONFIG_VERSION {
            return Err(ConfigError::Version { found: cfg.version, expected: CONFIG_VERSION });
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config is always representable")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |e: &dyn std::fmt::Display| ConfigError::Invalid(e.to_string());
        self.sim.validate().map_err(|e| invalid(&e))?;
        self.model.validate().map_err(|e| invalid(&e))?;
        self.loss.validate().map_err(|e| invalid(&e))?;
        self.schedule.validate().map_err(|e| invalid(&e))?;
        if self.model.visual_in != self.sim.visual_dim {
            return Err(ConfigError::Invalid(format!(
                "model.visual_in {} differs from sim.visual_dim {}",
                self.model.visual_in, self.sim.visual_dim
            )));
        }
        if self.model.imu_window != self.sim.ticks_per_frame() + 1 {
            return Err(ConfigError::Invalid(format!(
                "model.imu_window {} differs from the simulated window {}",
                self.model.imu_window,
                self.sim.ticks_per_frame() + 1
            )));
        }
        if self.data.sequences < 2 || !(self.data.train_fraction > 0.0 && self.data.train_fraction < 1.0) {
            return Err(ConfigError::Invalid("need ≥ 2 sequences and a train fraction in (0, 1)".into()));
        }
        let n_train = (self.data.sequences as f64 * self.data.train_fraction).round() as usize;
        if n_train == 0 || n_train >= self.data.sequences {
            return Err(ConfigError::Invalid("the split leaves an empty train or test set".into()));
        }
        if self.eval.seeds.is_empty() {
            return Err(ConfigError::Invalid("eval.seeds is empty".into()));
        }
        if self.sweep.ladder.iter().any(|&f| !(f >= 0.0)) {
            return Err(ConfigError::Invalid("sweep ladder entries must be ≥ 0".into()));
        }
        if self.sweep.reference >= self.sweep.ladder.len() {
            return Err(ConfigError::Invalid(format!(
                "sweep.reference {} is outside a ladder of {}",
                self.sweep.reference,
                self.sweep.ladder.len()
            )));
        }
        Ok(())
    }

    /// CRC-32 of the canonical TOML form, hex.
    pub fn fingerprint(&self) -> String {
        format!("{:08x}", crc32fast::hash(self.to_toml().as_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_the_default() {
        assert_eq!(ExperimentConfig::from_toml_str("").unwrap(), ExperimentConfig::default());
    }

    #[test]
    fn toml_round_trip() {
        let mut cfg = ExperimentConfig::default();
        cfg.seed = 42;
        cfg.loss.lambda = 3e-5;
        cfg.schedule.windows_per_epoch = 64;
        let back = ExperimentConfig::from_toml_str(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.fingerprint(), cfg.fingerprint());
    }

    #[test]
    fn partial_override_keeps_other_defaults() {
        let cfg = ExperimentConfig::from_toml_str("seed = 3\n[loss]\nalpha = 50.0\n").unwrap();
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.loss.alpha, 50.0);
        assert_eq!(cfg.loss.seq_len, 11);
        assert_eq!(cfg.model, ModelConfig::default());
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(ExperimentConfig::from_toml_str("version = 2"), Err(ConfigError::Version { found: 2, .. })));
        assert!(matches!(ExperimentConfig::from_toml_str("bogus = 1"), Err(ConfigError::Parse(_))));
        assert!(matches!(ExperimentConfig::from_toml_str("[loss]\nalpha = -1.0"), Err(ConfigError::Invalid(_))));
        assert!(matches!(ExperimentConfig::from_toml_str("[model]\nvisual_in = 32"), Err(ConfigError::Invalid(_))));
        assert!(matches!(ExperimentConfig::from_toml_str("[eval]\nseeds = []"), Err(ConfigError::Invalid(_))));
        assert!(matches!(ExperimentConfig::from_toml_str("[sweep]\nreference = 4"), Err(ConfigError::Invalid(_))));
    }

    #[test]
    fn fingerprint_tracks_content() {
        let a = ExperimentConfig::default();
        let b = ExperimentConfig { seed: 8, ..a.clone() };
        assert_ne!(a.fingerprint(), b.fingerprint());
    }
}
