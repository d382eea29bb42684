//! Resolved settings: command line over config file over built-in defaults.

use std::fs;
use std::path::Path;

use anyhow::Context;
use serde::{Deserialize, Serialize};
use signforge_dataset::AugmentConfig;
use signforge_serve::SessionConfig;
use signforge_training::{Metric, TrainConfig};

use crate::UsageError;

/// `--config` file schema. Every key is optional; unknown keys are rejected.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub max_epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub learning_rate: Option<f64>,
    pub momentum: Option<f64>,
    pub patience: Option<usize>,
    pub min_delta: Option<f64>,
    pub monitor: Option<Metric>,
    /// Present enables augmentation with these parameters.
    pub augment: Option<AugmentConfig>,
    pub image_size: Option<usize>,
    pub val_fraction: Option<f64>,
    pub quality_threshold: Option<f64>,
    pub k: Option<usize>,
    pub tau: Option<f32>,
    pub idle_ms: Option<u64>,
}

impl FileConfig {
    /// An empty or whitespace-only file is the same as `{}`.
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        if text.trim().is_empty() {
            return Ok(Self::default());
        }
        serde_json::from_str(&text).map_err(|e| UsageError(format!("config {}: {e}", path.display())).into())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSettings {
    pub image_size: usize,
    pub val_fraction: f64,
    pub quality_threshold: f64,
}

impl Default for DatasetSettings {
    fn default() -> Self {
        Self {
            image_size: 32,
            val_fraction: 0.2,
            quality_threshold: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Settings {
    pub seed: u64,
    pub train: TrainConfig,
    pub dataset: DatasetSettings,
    pub session: SessionConfig,
}

/// Command-line overrides, one per file key.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub max_epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub learning_rate: Option<f64>,
    pub momentum: Option<f64>,
    pub patience: Option<usize>,
    pub min_delta: Option<f64>,
    pub monitor: Option<Metric>,
    /// `Some(true)` turns on default augmentation unless the file configured it; `Some(false)` forces it off.
    pub augment: Option<bool>,
    pub image_size: Option<usize>,
    pub val_fraction: Option<f64>,
    pub quality_threshold: Option<f64>,
    pub k: Option<usize>,
    pub tau: Option<f32>,
    pub idle_ms: Option<u64>,
}

pub fn resolve(file: &FileConfig, cli: &Overrides) -> Settings {
    let seed = cli.seed.or(file.seed).unwrap_or(0);
    let d = TrainConfig::default();
    let mut train = TrainConfig {
        max_epochs: cli.max_epochs.or(file.max_epochs).unwrap_or(d.max_epochs),
        batch_size: cli.batch_size.or(file.batch_size).unwrap_or(d.batch_size),
        learning_rate: cli.learning_rate.or(file.learning_rate).unwrap_or(d.learning_rate),
        momentum: cli.momentum.or(file.momentum).unwrap_or(d.momentum),
        seed,
        augment: match cli.augment {
            Some(false) => None,
            Some(true) => Some(file.augment.clone().unwrap_or_default()),
            None => file.augment.clone(),
        },
        ..d
    };
    let es = &mut train.early_stopping;
    es.patience = cli.patience.or(file.patience).unwrap_or(es.patience);
    es.min_delta = cli.min_delta.or(file.min_delta).unwrap_or(es.min_delta);
    es.metric = cli.monitor.or(file.monitor).unwrap_or(es.metric);

    let dd = DatasetSettings::default();
    let dataset = DatasetSettings {
        image_size: cli.image_size.or(file.image_size).unwrap_or(dd.image_size),
        val_fraction: cli.val_fraction.or(file.val_fraction).unwrap_or(dd.val_fraction),
        quality_threshold: cli.quality_threshold.or(file.quality_threshold).unwrap_or(dd.quality_threshold),
    };
    let sd = SessionConfig::default();
    let session = SessionConfig {
        k: cli.k.or(file.k).unwrap_or(sd.k),
        tau: cli.tau.or(file.tau).unwrap_or(sd.tau),
        idle_ms: cli.idle_ms.or(file.idle_ms).unwrap_or(sd.idle_ms),
        window: sd.window,
    };
    Settings {
        seed,
        train,
        dataset,
        session,
    }
}
