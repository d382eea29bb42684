use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use signforge_core::layers::{apply_bn_updates, Ctx, Grads, Parameters};
use signforge_core::models::Model;
use signforge_core::ops;

use crate::config::TrainConfig;
use crate::data::{shuffled, TrainingData};
use crate::early_stop::{early_stop_update, Decision, EarlyStopState};
use crate::error::{Result, TrainError};
use crate::evaluate::evaluate;
use crate::sgd::{sgd_step, Velocity};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_acc: f64,
    pub train_loss: f64,
    pub val_acc: f64,
    pub val_loss: f64,
    /// Wall-clock seconds spent on this epoch, evaluation included.
    pub seconds: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Completion {
    MaxEpochs,
    EarlyStopped,
}

/// Outcome of one training run. Accuracy and loss fields are those of the
/// best epoch, whose weights the model holds on return.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub model_name: String,
    pub param_count: usize,
    pub epochs_executed: usize,
    pub best_epoch: usize,
    pub train_accuracy: f64,
    pub train_loss: f64,
    pub val_accuracy: f64,
    pub val_loss: f64,
    pub train_seconds: f64,
    /// Mean single-sample infer latency over 100 warm predictions.
    pub inference_ms: f64,
    pub history: Vec<EpochMetrics>,
    pub config: TrainConfig,
    pub completion: Completion,
}

pub fn train(model: &mut Model, data: &TrainingData, config: &TrainConfig) -> Result<RunRecord> {
    train_with(model, data, config, |_| {})
}

/// Trains in place, calling `on_epoch` after each epoch's evaluation.
pub fn train_with(
    model: &mut Model,
    data: &TrainingData,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochMetrics),
) -> Result<RunRecord> {
    config.validate()?;
    if data.train.is_empty() {
        return Err(TrainError::EmptySplit("train"));
    }
    if data.val.is_empty() {
        return Err(TrainError::EmptySplit("validation"));
    }
    if model.spec().input != data.input_shape() {
        return Err(TrainError::Config(format!(
            "model input {:?} does not match data {:?}",
            model.spec().input,
            data.input_shape()
        )));
    }
    if model.num_classes() != data.classes.len() {
        return Err(TrainError::Config(format!(
            "model has {} classes, data has {}",
            model.num_classes(),
            data.classes.len()
        )));
    }

    let norm = &data.normalization;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut velocity = Velocity::default();
    let mut stop = EarlyStopState::new();
    let mut best = model.clone();
    let mut history = Vec::new();
    let mut completion = Completion::MaxEpochs;
    let started = Instant::now();

    for epoch in 1..=config.max_epochs {
        let epoch_start = Instant::now();
        let order = shuffled(data.train.len(), &mut rng);
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let (x, labels) = match &config.augment {
                Some(cfg) => data.train.augmented_batch(chunk, norm, cfg, &mut rng)?,
                None => data.train.batch(chunk, norm)?,
            };
            let mut ctx = Ctx::train();
            let (logits, cache) = model.forward(&x, &mut ctx)?;
            let (loss, grad) = ops::softmax_cross_entropy(&logits, &labels)?;
            if !loss.is_finite() {
                return Err(TrainError::NonFinite { epoch, batch: b + 1 });
            }
            let mut grads = Grads::new();
            model.backward(&cache, &grad, &mut grads)?;
            sgd_step(model, &grads, config.learning_rate, config.momentum, &mut velocity)?;
            apply_bn_updates(model, ctx.bn_updates);
        }
        let tr = evaluate(model, &data.train, norm, config.batch_size)?;
        let va = evaluate(model, &data.val, norm, config.batch_size)?;
        let m = EpochMetrics {
            epoch,
            train_acc: tr.accuracy,
            train_loss: tr.loss,
            val_acc: va.accuracy,
            val_loss: va.loss,
            seconds: epoch_start.elapsed().as_secs_f64(),
        };
        log::info!(
            "{} epoch {epoch}: train acc {:.4} loss {:.4}, val acc {:.4} loss {:.4}",
            model.spec().name,
            m.train_acc,
            m.train_loss,
            m.val_acc,
            m.val_loss
        );
        on_epoch(&m);
        history.push(m);
        let es = &config.early_stopping;
        let value = if es.metric.maximize() { va.accuracy } else { va.loss };
        let decision = early_stop_update(&mut stop, value, es.patience, es.min_delta, es.metric.maximize());
        if stop.improved_last() {
            best = model.clone();
        }
        if decision == Decision::Stop {
            completion = Completion::EarlyStopped;
            break;
        }
    }
    let train_seconds = started.elapsed().as_secs_f64();
    *model = best;
    let b = &history[stop.best_epoch - 1];
    Ok(RunRecord {
        model_name: model.spec().name.clone(),
        param_count: model.param_count(),
        epochs_executed: history.len(),
        best_epoch: stop.best_epoch,
        train_accuracy: b.train_acc,
        train_loss: b.train_loss,
        val_accuracy: b.val_acc,
        val_loss: b.val_loss,
        train_seconds,
        inference_ms: inference_latency_ms(model, data)?,
        history,
        config: config.clone(),
        completion,
    })
}

/// Mean wall-clock milliseconds per single-image prediction, after warm-up.
pub fn inference_latency_ms(model: &Model, data: &TrainingData) -> Result<f64> {
    let split = if data.val.is_empty() { &data.train } else { &data.val };
    let (x, _) = split.batch(&[0], &data.normalization)?;
    for _ in 0..5 {
        model.predict(&x)?;
    }
    const RUNS: u32 = 100;
    let t = Instant::now();
    for _ in 0..RUNS {
        std::hint::black_box(model.predict(&x)?);
    }
    Ok(t.elapsed().as_secs_f64() * 1e3 / RUNS as f64)
}
