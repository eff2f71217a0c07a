use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lexical rule used to pick positives.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskType {
    /// Normalized answer equals the normalized target.
    #[default]
    Short,
    /// Normalized answer occurs as a token run in the stop-word-free target.
    Long,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    #[default]
    Sgd,
    Adam,
}

/// Training hyperparameters, loadable from TOML.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub seed: u64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub m_negatives: usize,
    pub cache_pool_size: usize,
    pub w_ae: f64,
    pub w_gen: f64,
    pub w_ret: f64,
    pub w_gen_ft: f64,
    pub task_type: TaskType,
    pub optimizer: OptimizerKind,
    /// Fraction of pre-training examples whose own entry joins the neighbors.
    pub retain_self_fraction: f64,
    /// Neighbors retrieved per pre-training example.
    pub neighbors: usize,
    /// Retrieved pairs fed to the generator; `None` uses the model's `top_k`,
    /// `Some(0)` trains without memory.
    pub retrieved_k: Option<usize>,
    /// Global gradient-norm clip; `None` disables clipping.
    pub clip_norm: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            seed: 0,
            learning_rate: 0.05,
            epochs: 10,
            batch_size: 8,
            m_negatives: 4,
            cache_pool_size: 64,
            w_ae: 0.5,
            w_gen: 1.0,
            w_ret: 1.0,
            w_gen_ft: 1.0,
            task_type: TaskType::Short,
            optimizer: OptimizerKind::Sgd,
            retain_self_fraction: 0.1,
            neighbors: 10,
            retrieved_k: None,
            clip_norm: None,
        }
    }
}

impl TrainConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: TrainConfig = toml::from_str(text).map_err(|e| Error::input(format!("training config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let finite_pos = |v: f64| v.is_finite() && v > 0.0;
        let finite_nonneg = |v: f64| v.is_finite() && v >= 0.0;
        if !finite_pos(self.learning_rate) {
            return Err(Error::input("learning_rate must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::input("batch_size must be at least 1"));
        }
        if self.m_negatives == 0 {
            return Err(Error::input("m_negatives must be at least 1"));
        }
        if self.cache_pool_size == 0 {
            return Err(Error::input("cache_pool_size must be at least 1"));
        }
        if self.neighbors == 0 {
            return Err(Error::input("neighbors must be at least 1"));
        }
        if ![self.w_ae, self.w_gen, self.w_ret, self.w_gen_ft]
            .into_iter()
            .all(finite_nonneg)
        {
            return Err(Error::input("loss weights must be finite and non-negative"));
        }
        if !(0.0..=1.0).contains(&self.retain_self_fraction) {
            return Err(Error::input("retain_self_fraction must lie in [0, 1]"));
        }
        if self.clip_norm.is_some_and(|c| !finite_pos(c)) {
            return Err(Error::input("clip_norm must be positive"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = TrainConfig::default();
        assert_eq!(TrainConfig::from_toml_str(&cfg.to_toml_string()).unwrap(), cfg);
    }

    #[test]
    fn partial_files_fill_defaults() {
        let cfg = TrainConfig::from_toml_str("seed = 7\ntask_type = \"long\"\noptimizer = \"adam\"\n").unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.task_type, TaskType::Long);
        assert_eq!(cfg.optimizer, OptimizerKind::Adam);
        assert_eq!(cfg.m_negatives, 4);
        assert_eq!((cfg.w_ae, cfg.w_gen, cfg.w_ret, cfg.w_gen_ft), (0.5, 1.0, 1.0, 1.0));
    }

    #[test]
    fn rejects_unknown_and_invalid_fields() {
        assert!(TrainConfig::from_toml_str("sed = 1").is_err());
        assert!(TrainConfig::from_toml_str("batch_size = 0").is_err());
        assert!(TrainConfig::from_toml_str("w_ae = -1.0").is_err());
        assert!(TrainConfig::from_toml_str("retain_self_fraction = 1.5").is_err());
        assert!(TrainConfig::from_toml_str("task_type = \"medium\"").is_err());
    }
}
