use serde::{Deserialize, Serialize};
use signforge_dataset::AugmentConfig;

use crate::error::{Result, TrainError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    Sgd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    ValLoss,
    ValAccuracy,
}

impl Metric {
    /// Whether larger values are better.
    pub fn maximize(self) -> bool {
        matches!(self, Self::ValAccuracy)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EarlyStopConfig {
    pub metric: Metric,
    pub patience: usize,
    pub min_delta: f64,
}

impl Default for EarlyStopConfig {
    fn default() -> Self {
        Self {
            metric: Metric::ValLoss,
            patience: 5,
            min_delta: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub max_epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: Optimizer,
    pub momentum: f64,
    pub early_stopping: EarlyStopConfig,
    pub seed: u64,
    /// `None` trains on the images as stored.
    pub augment: Option<AugmentConfig>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            max_epochs: 50,
            batch_size: 64,
            learning_rate: 0.001,
            optimizer: Optimizer::Sgd,
            momentum: 0.0,
            early_stopping: EarlyStopConfig::default(),
            seed: 0,
            augment: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(TrainError::Config(m));
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning rate {} must be non-negative", self.learning_rate));
        }
        if self.batch_size == 0 {
            return bad("batch size must be at least 1".into());
        }
        if self.max_epochs == 0 {
            return bad("max epochs must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum {} outside [0, 1)", self.momentum));
        }
        if self.early_stopping.patience == 0 {
            return bad("early-stopping patience must be at least 1".into());
        }
        if !(self.early_stopping.min_delta >= 0.0) {
            return bad("early-stopping min_delta must be >= 0".into());
        }
        if let Some(a) = &self.augment {
            a.validate()?;
        }
        Ok(())
    }
}
