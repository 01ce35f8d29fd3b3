//! Training hyperparameters.
//!
//! Defaults ship in `config/defaults.json`; every contract echoes the
//! configuration its frontier was built with.

use serde::{Deserialize, Serialize};
use thiserror::Error;

const DEFAULTS: &str = include_str!("../config/defaults.json");

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("config io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRegConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub l2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DpSgdConfig {
    pub clip_norm: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    /// Rows per step; 0 means full batch.
    pub batch_size: usize,
    pub l2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub depth: usize,
    pub thresholds_per_feature: usize,
    pub min_leaf_rows: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnnConfig {
    pub k: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReductionConfig {
    /// Bound B on the L1 norm of the multipliers.
    pub bound: f64,
    /// Step size; `None` means `2 / sqrt(iterations)`.
    pub eta: Option<f64>,
    pub iterations: usize,
    pub nu: f64,
    pub trim_below: f64,
}

impl ReductionConfig {
    pub fn step_size(&self) -> f64 {
        self.eta.unwrap_or(2.0 / (self.iterations.max(1) as f64).sqrt())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PostprocessConfig {
    pub objective: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub version: String,
    pub test_fraction: f64,
    /// Share of the training split held out to fit group thresholds.
    pub calibration_fraction: f64,
    pub stratify_split: bool,
    pub logreg: LogRegConfig,
    pub dp_sgd: DpSgdConfig,
    pub forest: ForestConfig,
    pub knn: KnnConfig,
    pub reduction: ReductionConfig,
    pub postprocess: PostprocessConfig,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self::from_json(DEFAULTS).expect("bundled defaults are valid")
    }
}

impl TrainingConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn read(path: impl AsRef<std::path::Path>) -> Result<Self, ConfigError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return bad("test_fraction must lie in (0, 1)");
        }
        if !(self.calibration_fraction > 0.0 && self.calibration_fraction < 1.0) {
            return bad("calibration_fraction must lie in (0, 1)");
        }
        if self.dp_sgd.clip_norm <= 0.0 || self.dp_sgd.learning_rate <= 0.0 {
            return bad("dp_sgd clip_norm and learning_rate must be positive");
        }
        if self.forest.n_trees == 0 {
            return bad("forest needs at least one tree");
        }
        if self.knn.k == 0 {
            return bad("knn k must be at least 1");
        }
        if self.reduction.iterations == 0 || self.reduction.bound <= 0.0 {
            return bad("reduction needs iterations >= 1 and a positive bound");
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_parse() {
        let c = TrainingConfig::default();
        assert_eq!(c.reduction.bound, 100.0);
        assert_eq!(c.reduction.iterations, 50);
        assert!((c.reduction.step_size() - 2.0 / 50f64.sqrt()).abs() < 1e-15);
        assert_eq!(c.calibration_fraction, 0.2);
    }
}
