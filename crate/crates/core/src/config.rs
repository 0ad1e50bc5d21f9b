//! Training configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ifim::AblationFlags;
use crate::network::{LossConfig, NetworkConfig};
use crate::optim::AdamWConfig;

fn default_lr() -> f64 {
    6e-4
}
fn default_weight_decay() -> f64 {
    0.01
}
fn default_batch_size() -> usize {
    8
}
fn default_epochs() -> usize {
    1
}
fn default_threshold() -> f64 {
    0.5
}
fn default_true() -> bool {
    true
}
fn default_output_dir() -> PathBuf {
    PathBuf::from("runs")
}

/// Everything needed to reproduce a training run. Every field has a
/// default, so partial JSON files are accepted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    #[serde(default)]
    pub model: NetworkConfig,
    /// Peak learning rate, annealed to 0 with a cosine over all steps.
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_weight_decay")]
    pub weight_decay: f64,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    /// Stops after this many optimizer steps; the schedule horizon shrinks
    /// to match.
    #[serde(default)]
    pub max_steps: Option<usize>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_true")]
    pub use_psr: bool,
    #[serde(default = "default_true")]
    pub use_csr: bool,
    /// Foreground when probability exceeds this.
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    /// Square side images are resized to; `None` keeps native size.
    #[serde(default)]
    pub input_size: Option<usize>,
    #[serde(default)]
    pub loss: LossConfig,
    /// Train only on English expressions.
    #[serde(default = "default_true")]
    pub english_only: bool,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: NetworkConfig::default(),
            lr: default_lr(),
            weight_decay: default_weight_decay(),
            batch_size: default_batch_size(),
            epochs: default_epochs(),
            max_steps: None,
            seed: 0,
            use_psr: true,
            use_csr: true,
            threshold: default_threshold(),
            input_size: None,
            loss: LossConfig::default(),
            english_only: true,
            output_dir: default_output_dir(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.threshold) {
            return Err(Error::Config(format!(
                "threshold must lie in [0, 1), got {}",
                self.threshold
            )));
        }
        if let Some(size) = self.input_size {
            let m = self.model.size_multiple();
            if size == 0 || size % m != 0 {
                return Err(Error::Config(format!(
                    "input_size {size} must be a positive multiple of {m}"
                )));
            }
        }
        self.model.validate()
    }

    pub fn flags(&self) -> AblationFlags {
        AblationFlags {
            use_psr: self.use_psr,
            use_csr: self.use_csr,
        }
    }

    pub fn optimizer(&self) -> AdamWConfig {
        AdamWConfig {
            weight_decay: self.weight_decay,
            ..AdamWConfig::default()
        }
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: Self = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_round_trip_is_lossless() {
        let cfg = TrainConfig {
            lr: 1.234e-4,
            max_steps: Some(17),
            use_csr: false,
            input_size: Some(256),
            ..TrainConfig::default()
        };
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(serde_json::from_str::<TrainConfig>(&text).unwrap(), cfg);
    }

    #[test]
    fn partial_json_fills_defaults() {
        let cfg: TrainConfig = serde_json::from_str(r#"{"epochs": 3}"#).unwrap();
        assert_eq!(cfg.epochs, 3);
        assert_eq!(cfg.lr, 6e-4);
        assert_eq!(cfg.weight_decay, 0.01);
    }

    #[test]
    fn invalid_values_are_rejected() {
        let bad_lr = TrainConfig {
            lr: 0.0,
            ..TrainConfig::default()
        };
        assert!(bad_lr.validate().is_err());
        let bad_epochs = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        assert!(bad_epochs.validate().is_err());
        let bad_size = TrainConfig {
            input_size: Some(200),
            ..TrainConfig::default()
        };
        assert!(bad_size.validate().is_err());
    }
}
