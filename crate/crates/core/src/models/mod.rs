//! Miniature classifiers assembled from [`crate::blocks`], their registry,
//! and the `SGNF` weights format.

mod io;
mod registry;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::blocks::{Block, BlockCache, BlockError, BlockSpec, Chw};
use crate::element::Element;
use crate::error::TensorError;
use crate::layers::{Conv, ConvUnit, ConvUnitCache, Ctx, Grads, Linear, Parameters, TensorRole};
use crate::ops::{self, Padding};
use crate::tensor::Tensor;

pub use io::{FORMAT_VERSION, MAGIC};
pub use registry::{asl_letters, registry, registry_spec, MODEL_NAMES};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model spec: {0}")]
    InvalidSpec(String),
    #[error("stage {index} ({kind}): {source}")]
    Stage {
        index: usize,
        kind: &'static str,
        #[source]
        source: BlockError,
    },
    #[error("input shape {actual:?} does not match model input {expected:?}")]
    InputShape { expected: Vec<usize>, actual: Vec<usize> },
    #[error("unknown model {0:?}")]
    UnknownModel(String),
    #[error(transparent)]
    Block(#[from] BlockError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a weights file (bad magic)")]
    BadMagic,
    #[error("unsupported weights format version {found} (expected {expected})")]
    Version { found: u16, expected: u16 },
    #[error("weights file truncated")]
    Truncated,
    #[error("weights checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    Checksum { stored: u32, computed: u32 },
    #[error("malformed weights file: {0}")]
    Format(String),
}

pub type ModelResult<T> = std::result::Result<T, ModelError>;

/// Initial convolution: `kernel x kernel / stride`, same padding, no bias, then BN and ReLU.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StemSpec {
    pub channels: usize,
    pub kernel: usize,
    pub stride: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Head {
    GlobalAvgPool,
    Flatten,
}

/// Per-channel input standardization, `(x - mean) / std` on values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Normalization {
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
}

impl Default for Normalization {
    fn default() -> Self {
        Self {
            mean: vec![0.5; 3],
            std: vec![0.5; 3],
        }
    }
}

impl Normalization {
    pub fn validate(&self, channels: usize) -> ModelResult<()> {
        if self.mean.len() != channels || self.std.len() != channels {
            return Err(ModelError::InvalidSpec(format!(
                "normalization has {}/{} entries for {channels} channels",
                self.mean.len(),
                self.std.len()
            )));
        }
        if self.std.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(ModelError::InvalidSpec("normalization std must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub name: String,
    /// `[C, H, W]`.
    pub input: Chw,
    #[serde(default = "default_classes")]
    pub num_classes: usize,
    #[serde(default)]
    pub stem: Option<StemSpec>,
    pub stages: Vec<BlockSpec>,
    pub head: Head,
    /// Label for each class index; empty means unnamed.
    #[serde(default)]
    pub classes: Vec<String>,
    #[serde(default)]
    pub normalization: Normalization,
}

fn default_classes() -> usize {
    24
}

/// Shapes flowing through a spec: after the stem, after each stage, and the classifier width.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapePlan {
    pub stem: Chw,
    pub stages: Vec<Chw>,
    pub features: usize,
}

impl ModelSpec {
    pub fn with_classes(mut self, classes: Vec<String>) -> Self {
        self.num_classes = classes.len();
        self.classes = classes;
        self
    }

    pub fn with_input(mut self, input: Chw) -> Self {
        self.input = input;
        self
    }

    /// Walks the stage chain, reporting the first stage whose input it cannot accept.
    pub fn plan(&self) -> ModelResult<ShapePlan> {
        if self.num_classes < 2 {
            return Err(ModelError::InvalidSpec(format!("num_classes {} < 2", self.num_classes)));
        }
        if !self.classes.is_empty() && self.classes.len() != self.num_classes {
            return Err(ModelError::InvalidSpec(format!(
                "{} class labels for {} classes",
                self.classes.len(),
                self.num_classes
            )));
        }
        let [c, h, w] = self.input;
        if c == 0 || h == 0 || w == 0 {
            return Err(ModelError::InvalidSpec(format!("input {:?} has a zero dimension", self.input)));
        }
        self.normalization.validate(c)?;
        let stem = match self.stem {
            Some(s) => {
                if s.channels == 0 || s.stride == 0 || s.kernel % 2 == 0 {
                    return Err(ModelError::InvalidSpec(format!("stem {s:?} needs positive width/stride and odd kernel")));
                }
                [s.channels, h.div_ceil(s.stride), w.div_ceil(s.stride)]
            }
            None => self.input,
        };
        let mut shape = stem;
        let mut stages = Vec::with_capacity(self.stages.len());
        for (index, st) in self.stages.iter().enumerate() {
            shape = st.output_shape(shape).map_err(|source| ModelError::Stage {
                index,
                kind: st.kind(),
                source,
            })?;
            stages.push(shape);
        }
        let features = match self.head {
            Head::GlobalAvgPool => shape[0],
            Head::Flatten => shape.iter().product(),
        };
        Ok(ShapePlan { stem, stages, features })
    }

    /// Learnable scalar count predicted from the spec alone.
    pub fn param_count(&self) -> ModelResult<usize> {
        let plan = self.plan()?;
        let mut total = 0;
        if let Some(s) = self.stem {
            total += s.kernel * s.kernel * self.input[0] * s.channels + 2 * s.channels;
        }
        let mut cin = plan.stem[0];
        for (st, out) in self.stages.iter().zip(&plan.stages) {
            total += st.param_count(cin);
            cin = out[0];
        }
        Ok(total + plan.features * self.num_classes + self.num_classes)
    }

    pub fn label(&self, class: usize) -> String {
        self.classes.get(class).cloned().unwrap_or_else(|| class.to_string())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model<T = f32> {
    spec: ModelSpec,
    pub stem: Option<ConvUnit<T>>,
    pub stages: Vec<Block<T>>,
    pub classifier: Linear<T>,
}

#[derive(Debug, Clone)]
pub struct ModelCache<T> {
    stem: Option<ConvUnitCache<T>>,
    stages: Vec<BlockCache<T>>,
    trunk_shape: Vec<usize>,
    features: Tensor<T>,
}

/// Top-1 class and the full probability vector for one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction<T = f32> {
    pub class: usize,
    pub probs: Vec<T>,
}

impl<T: Element> Prediction<T> {
    pub fn confidence(&self) -> T {
        self.probs[self.class]
    }
}

/// Index of the first maximum.
pub fn argmax<T: PartialOrd + Copy>(v: &[T]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Classifier weights start at this fraction of He scale so fresh models predict near-uniformly.
pub const HEAD_GAIN: f64 = 0.1;

impl<T: Element> Model<T> {
    /// Builds and initializes a model; the same `seed` always yields identical parameters.
    pub fn build(spec: ModelSpec, seed: u64) -> ModelResult<Self> {
        let plan = spec.plan()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let stem = spec.stem.map(|s| {
            let conv = Conv::new("stem", spec.input[0], s.channels, s.kernel, s.stride, Padding::Same, false, &mut rng);
            ConvUnit::new(conv, true, true)
        });
        let mut shape = plan.stem;
        let mut stages = Vec::with_capacity(spec.stages.len());
        for (index, st) in spec.stages.iter().enumerate() {
            let block = st
                .build(shape, &format!("stage{index}"), &mut rng)
                .map_err(|source| ModelError::Stage {
                    index,
                    kind: st.kind(),
                    source,
                })?;
            stages.push(block);
            shape = plan.stages[index];
        }
        let classifier = Linear::scaled("head.fc", plan.features, spec.num_classes, HEAD_GAIN, &mut rng);
        Ok(Self {
            spec,
            stem,
            stages,
            classifier,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn num_classes(&self) -> usize {
        self.spec.num_classes
    }

    fn check_input(&self, x: &Tensor<T>) -> ModelResult<usize> {
        let s = x.shape();
        if s.len() != 4 || s[1..] != self.spec.input[..] || s[0] == 0 {
            let mut expected = vec![s.first().copied().unwrap_or(1).max(1)];
            expected.extend_from_slice(&self.spec.input);
            return Err(ModelError::InputShape {
                expected,
                actual: s.to_vec(),
            });
        }
        Ok(s[0])
    }

    /// Logits `[N, K]` plus the activations needed by [`Model::backward`].
    pub fn forward(&self, x: &Tensor<T>, ctx: &mut Ctx<T>) -> ModelResult<(Tensor<T>, ModelCache<T>)> {
        let n = self.check_input(x)?;
        let (mut h, stem) = match &self.stem {
            Some(u) => {
                let (y, c) = u.forward(x, ctx)?;
                (y, Some(c))
            }
            None => (x.clone(), None),
        };
        let mut stages = Vec::with_capacity(self.stages.len());
        for b in &self.stages {
            let (y, c) = b.forward(&h, ctx)?;
            stages.push(c);
            h = y;
        }
        let trunk_shape = h.shape().to_vec();
        let features = match self.spec.head {
            Head::GlobalAvgPool => ops::global_avg_pool(&h)?,
            Head::Flatten => {
                let d = h.len() / n;
                h.reshape(vec![n, d])?
            }
        };
        let logits = self.classifier.forward(&features)?;
        Ok((
            logits,
            ModelCache {
                stem,
                stages,
                trunk_shape,
                features,
            },
        ))
    }

    /// Accumulates parameter gradients into `grads`; returns the input gradient.
    pub fn backward(&self, cache: &ModelCache<T>, grad_logits: &Tensor<T>, grads: &mut Grads<T>) -> ModelResult<Tensor<T>> {
        let gf = self.classifier.backward(&cache.features, grad_logits, grads)?;
        let mut g = match self.spec.head {
            Head::GlobalAvgPool => ops::global_avg_pool_grad(&cache.trunk_shape, &gf)?,
            Head::Flatten => gf.reshape(cache.trunk_shape.clone())?,
        };
        for (b, c) in self.stages.iter().zip(&cache.stages).rev() {
            g = b.backward(c, &g, grads)?;
        }
        if let (Some(u), Some(c)) = (&self.stem, &cache.stem) {
            g = u.backward(c, &g, grads)?;
        }
        Ok(g)
    }

    /// Infer-mode logits.
    pub fn logits(&self, x: &Tensor<T>) -> ModelResult<Tensor<T>> {
        let mut ctx = Ctx::infer();
        self.forward(x, &mut ctx).map(|(y, _)| y)
    }

    /// Infer-mode softmax probabilities per sample.
    pub fn predict_batch(&self, x: &Tensor<T>) -> ModelResult<Vec<Prediction<T>>> {
        let probs = ops::softmax(&self.logits(x)?)?;
        let k = self.num_classes();
        Ok(probs
            .data()
            .chunks(k)
            .map(|row| Prediction {
                class: argmax(row),
                probs: row.to_vec(),
            })
            .collect())
    }

    /// Single image as `[C, H, W]` or `[1, C, H, W]`.
    pub fn predict(&self, image: &Tensor<T>) -> ModelResult<Prediction<T>> {
        let x = if image.rank() == 3 {
            let mut s = vec![1];
            s.extend_from_slice(image.shape());
            image.clone().reshape(s)?
        } else {
            image.clone()
        };
        if x.shape().first() != Some(&1) {
            return Err(ModelError::InputShape {
                expected: [&[1][..], &self.spec.input[..]].concat(),
                actual: image.shape().to_vec(),
            });
        }
        Ok(self.predict_batch(&x)?.remove(0))
    }

    /// Names of every saved tensor, parameters and buffers, in visit order.
    pub fn tensor_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        self.visit(&mut |n, _, _| names.push(n.to_owned()));
        names
    }
}

impl<T: Element> Parameters<T> for Model<T> {
    fn visit(&self, f: &mut dyn FnMut(&str, &Tensor<T>, TensorRole)) {
        if let Some(s) = &self.stem {
            s.visit(f);
        }
        self.stages.iter().for_each(|b| b.visit(f));
        self.classifier.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor<T>, TensorRole)) {
        if let Some(s) = &mut self.stem {
            s.visit_mut(f);
        }
        self.stages.iter_mut().for_each(|b| b.visit_mut(f));
        self.classifier.visit_mut(f);
    }
}
