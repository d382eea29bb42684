use serde::{Deserialize, Serialize};
use signforge_core::models::{argmax, Model, Normalization};
use signforge_core::ops;

use crate::data::LoadedSplit;
use crate::error::{Result, TrainError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub accuracy: f64,
    /// Mean per-sample cross-entropy.
    pub loss: f64,
    pub correct: usize,
    pub total: usize,
}

/// Infer-mode pass over every sample of `split` exactly once.
pub fn evaluate(model: &Model, split: &LoadedSplit, norm: &Normalization, batch_size: usize) -> Result<Evaluation> {
    if split.is_empty() {
        return Err(TrainError::EmptySplit("evaluation"));
    }
    if batch_size == 0 {
        return Err(TrainError::Config("batch size must be at least 1".into()));
    }
    let idx: Vec<usize> = (0..split.len()).collect();
    let k = model.num_classes();
    let (mut correct, mut loss_sum) = (0usize, 0f64);
    for chunk in idx.chunks(batch_size) {
        let (x, labels) = split.batch(chunk, norm)?;
        let logits = model.logits(&x)?;
        let (loss, _) = ops::softmax_cross_entropy(&logits, &labels)?;
        loss_sum += loss as f64 * chunk.len() as f64;
        correct += logits
            .data()
            .chunks(k)
            .zip(&labels)
            .filter(|(row, &l)| argmax(row) == l)
            .count();
    }
    let total = split.len();
    Ok(Evaluation {
        accuracy: correct as f64 / total as f64,
        loss: loss_sum / total as f64,
        correct,
        total,
    })
}
