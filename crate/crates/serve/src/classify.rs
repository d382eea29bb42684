use image::RgbImage;
use serde::{Deserialize, Serialize};
use signforge_core::models::{Model, Normalization};
use signforge_core::Tensor;
use signforge_dataset::prepare;

use crate::error::{Result, ServeError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionEvent {
    pub frame: u64,
    pub class: usize,
    pub label: String,
    /// Probability of `class`, the maximum of `probs`.
    pub prob: f32,
    pub probs: Vec<f32>,
    /// Milliseconds since the session started.
    pub timestamp_ms: u64,
}

/// Resizes `frame` to the model input, standardizes it with `norm` and predicts in infer mode.
pub fn classify_frame(
    model: &Model,
    frame: &RgbImage,
    norm: &Normalization,
    frame_index: u64,
    timestamp_ms: u64,
) -> Result<PredictionEvent> {
    let [c, h, w] = model.spec().input;
    if c != 3 {
        return Err(ServeError::Channels(c));
    }
    let p = prepare(frame, [h, w], norm);
    let x = Tensor::new(vec![1, c, h, w], p.data)?;
    let pred = model.predict(&x)?;
    Ok(PredictionEvent {
        frame: frame_index,
        class: pred.class,
        label: model.spec().label(pred.class),
        prob: pred.confidence(),
        probs: pred.probs,
        timestamp_ms,
    })
}
