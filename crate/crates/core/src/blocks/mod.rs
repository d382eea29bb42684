//! Architecture building blocks composed from the tensor kernels.
//!
//! A [`BlockSpec`] is pure configuration: it predicts output shape and
//! parameter count without allocating anything. [`BlockSpec::build`] turns it
//! into a [`Block`] with initialized weights.

mod dense;
mod inception;
mod inverted;
mod residual;
mod separable;
mod vgg;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::element::Element;
use crate::error::TensorError;
use crate::layers::{Ctx, Grads, Parameters, TensorRole};
use crate::ops::{self, Padding, PoolParams};
use crate::tensor::Tensor;

pub use dense::{DenseBlock, DenseCache, TransitionCache, TransitionLayer};
pub use inception::{InceptionCache, InceptionModule};
pub use inverted::{InvertedResidual, InvertedResidualCache};
pub use residual::{ResidualBlock, ResidualCache, ResidualKind};
pub use separable::{SepConv, SeparableBlock, SeparableCache};
pub use vgg::{VggBlock, VggCache};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BlockError {
    #[error("invalid {kind} block: {reason}")]
    InvalidSpec { kind: &'static str, reason: String },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type BlockResult<T> = std::result::Result<T, BlockError>;

/// Channel-height-width shape of a single sample.
pub type Chw = [usize; 3];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BlockSpec {
    /// `convs` x (3x3 same conv + ReLU) at `channels`, then 2x2/2 max-pool.
    Vgg { convs: usize, channels: usize },
    /// Parallel 1x1, 1x1->3x3, 1x1->5x5 and 3x3-pool->1x1 branches, concatenated.
    Inception {
        b1: usize,
        reduce3: usize,
        b3: usize,
        reduce5: usize,
        b5: usize,
        bpool: usize,
    },
    ResidualBasic { channels: usize, stride: usize },
    /// 1x1 -> 3x3 -> 1x1 with inner width `channels / 4` (at least 1).
    ResidualBottleneck { channels: usize, stride: usize },
    /// `repeat` stacked depthwise 3x3 -> pointwise 1x1 convs inside one residual shortcut.
    Separable {
        channels: usize,
        stride: usize,
        #[serde(default = "one")]
        repeat: usize,
    },
    DenseBlock { layers: usize, growth: usize },
    Transition { compression: f64 },
    /// Expand (x`expansion`) -> depthwise 3x3 -> linear projection to `channels`.
    InvertedResidual {
        channels: usize,
        stride: usize,
        expansion: usize,
    },
    MaxPool { window: usize, stride: usize },
}

fn invalid(kind: &'static str, reason: impl Into<String>) -> BlockError {
    BlockError::InvalidSpec {
        kind,
        reason: reason.into(),
    }
}

fn positive(kind: &'static str, fields: &[(&str, usize)]) -> BlockResult<()> {
    for &(name, v) in fields {
        if v == 0 {
            return Err(invalid(kind, format!("{name} must be positive")));
        }
    }
    Ok(())
}

fn halve(kind: &'static str, [c, h, w]: Chw) -> BlockResult<Chw> {
    if h < 2 || w < 2 {
        return Err(invalid(kind, format!("spatial extent {h}x{w} is below the 2x2 pooling window")));
    }
    Ok([c, h / 2, w / 2])
}

pub(crate) fn bottleneck_width(channels: usize) -> usize {
    (channels / 4).max(1)
}

pub(crate) fn dense_bottleneck(growth: usize) -> usize {
    4 * growth
}

/// 3x3 same conv + bias per stage.
fn one() -> usize {
    1
}

fn conv_params(k: usize, cin: usize, cout: usize, bias: bool) -> usize {
    k * k * cin * cout + if bias { cout } else { 0 }
}

impl BlockSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            Self::Vgg { .. } => "vgg",
            Self::Inception { .. } => "inception",
            Self::ResidualBasic { .. } => "residual_basic",
            Self::ResidualBottleneck { .. } => "residual_bottleneck",
            Self::Separable { .. } => "separable",
            Self::DenseBlock { .. } => "dense_block",
            Self::Transition { .. } => "transition",
            Self::InvertedResidual { .. } => "inverted_residual",
            Self::MaxPool { .. } => "max_pool",
        }
    }

    /// Output shape for a `[C, H, W]` input, computed before any data flows.
    pub fn output_shape(&self, input: Chw) -> BlockResult<Chw> {
        let kind = self.kind();
        let [c, h, w] = input;
        positive(kind, &[("input channels", c), ("input height", h), ("input width", w)])?;
        let strided = |channels: usize, stride: usize| -> BlockResult<Chw> {
            positive(kind, &[("channels", channels), ("stride", stride)])?;
            Ok([channels, h.div_ceil(stride), w.div_ceil(stride)])
        };
        match *self {
            Self::Vgg { convs, channels } => {
                positive(kind, &[("convs", convs), ("channels", channels)])?;
                halve(kind, [channels, h, w])
            }
            Self::Inception {
                b1,
                reduce3,
                b3,
                reduce5,
                b5,
                bpool,
            } => {
                positive(
                    kind,
                    &[
                        ("b1", b1),
                        ("reduce3", reduce3),
                        ("b3", b3),
                        ("reduce5", reduce5),
                        ("b5", b5),
                        ("bpool", bpool),
                    ],
                )?;
                Ok([b1 + b3 + b5 + bpool, h, w])
            }
            Self::ResidualBasic { channels, stride } | Self::ResidualBottleneck { channels, stride } => {
                strided(channels, stride)
            }
            Self::Separable { channels, stride, repeat } => {
                positive(kind, &[("repeat", repeat)])?;
                strided(channels, stride)
            }
            Self::InvertedResidual {
                channels,
                stride,
                expansion,
            } => {
                positive(kind, &[("expansion", expansion)])?;
                strided(channels, stride)
            }
            Self::DenseBlock { layers, growth } => {
                positive(kind, &[("layers", layers), ("growth", growth)])?;
                Ok([c + layers * growth, h, w])
            }
            Self::Transition { compression } => {
                if !(compression > 0.0 && compression <= 1.0) {
                    return Err(invalid(kind, format!("compression {compression} outside (0, 1]")));
                }
                let out = transition_channels(c, compression);
                if out == 0 {
                    return Err(invalid(kind, format!("compression {compression} leaves no channels from {c}")));
                }
                halve(kind, [out, h, w])
            }
            Self::MaxPool { window, stride } => {
                positive(kind, &[("window", window), ("stride", stride)])?;
                let ho = ops::output_dim(h, window, stride, Padding::Valid)?;
                let wo = ops::output_dim(w, window, stride, Padding::Valid)?;
                Ok([c, ho, wo])
            }
        }
    }

    /// Learnable scalars (conv/linear weights and biases, BN gamma/beta) for `in_channels` inputs.
    pub fn param_count(&self, in_channels: usize) -> usize {
        let cin = in_channels;
        let bn = |c: usize| 2 * c;
        let projection = |cout: usize, stride: usize| {
            if stride == 1 && cin == cout {
                0
            } else {
                conv_params(1, cin, cout, false) + bn(cout)
            }
        };
        match *self {
            Self::Vgg { convs, channels } => (0..convs)
                .map(|i| conv_params(3, if i == 0 { cin } else { channels }, channels, true))
                .sum(),
            Self::Inception {
                b1,
                reduce3,
                b3,
                reduce5,
                b5,
                bpool,
            } => {
                conv_params(1, cin, b1, true)
                    + conv_params(1, cin, reduce3, true)
                    + conv_params(3, reduce3, b3, true)
                    + conv_params(1, cin, reduce5, true)
                    + conv_params(5, reduce5, b5, true)
                    + conv_params(1, cin, bpool, true)
            }
            Self::ResidualBasic { channels, stride } => {
                conv_params(3, cin, channels, false)
                    + bn(channels)
                    + conv_params(3, channels, channels, false)
                    + bn(channels)
                    + projection(channels, stride)
            }
            Self::ResidualBottleneck { channels, stride } => {
                let m = bottleneck_width(channels);
                conv_params(1, cin, m, false)
                    + bn(m)
                    + conv_params(3, m, m, false)
                    + bn(m)
                    + conv_params(1, m, channels, false)
                    + bn(channels)
                    + projection(channels, stride)
            }
            Self::Separable { channels, stride, repeat } => {
                let first = 9 * cin + cin * channels + bn(channels);
                let rest = repeat.saturating_sub(1) * (9 * channels + channels * channels + bn(channels));
                first + rest + projection(channels, stride)
            }
            Self::DenseBlock { layers, growth } => (0..layers)
                .map(|i| {
                    let c = cin + i * growth;
                    let b = dense_bottleneck(growth);
                    bn(c) + conv_params(1, c, b, false) + bn(b) + conv_params(3, b, growth, false)
                })
                .sum(),
            Self::Transition { compression } => bn(cin) + conv_params(1, cin, transition_channels(cin, compression), false),
            Self::InvertedResidual {
                channels,
                expansion,
                ..
            } => {
                let e = expansion * cin;
                conv_params(1, cin, e, false) + bn(e) + 9 * e + bn(e) + conv_params(1, e, channels, false) + bn(channels)
            }
            Self::MaxPool { .. } => 0,
        }
    }

    /// Allocates and initializes the block; parameter names are prefixed with `prefix`.
    pub fn build<T: Element>(&self, input: Chw, prefix: &str, rng: &mut impl Rng) -> BlockResult<Block<T>> {
        self.output_shape(input)?;
        let cin = input[0];
        Ok(match *self {
            Self::Vgg { convs, channels } => Block::Vgg(VggBlock::new(prefix, cin, convs, channels, rng)),
            Self::Inception {
                b1,
                reduce3,
                b3,
                reduce5,
                b5,
                bpool,
            } => Block::Inception(InceptionModule::new(prefix, cin, [b1, reduce3, b3, reduce5, b5, bpool], rng)),
            Self::ResidualBasic { channels, stride } => {
                Block::Residual(ResidualBlock::new(prefix, ResidualKind::Basic, cin, channels, stride, rng))
            }
            Self::ResidualBottleneck { channels, stride } => {
                Block::Residual(ResidualBlock::new(prefix, ResidualKind::Bottleneck, cin, channels, stride, rng))
            }
            Self::Separable { channels, stride, repeat } => {
                Block::Separable(SeparableBlock::new(prefix, cin, channels, stride, repeat, rng))
            }
            Self::DenseBlock { layers, growth } => Block::Dense(DenseBlock::new(prefix, cin, layers, growth, rng)),
            Self::Transition { compression } => Block::Transition(TransitionLayer::new(
                prefix,
                cin,
                transition_channels(cin, compression),
                rng,
            )),
            Self::InvertedResidual {
                channels,
                stride,
                expansion,
            } => Block::InvertedResidual(InvertedResidual::new(prefix, cin, channels, stride, expansion, rng)),
            Self::MaxPool { window, stride } => Block::MaxPool(PoolParams::new(window, stride, Padding::Valid)),
        })
    }
}

pub(crate) fn transition_channels(cin: usize, compression: f64) -> usize {
    (compression * cin as f64 + 1e-9).floor() as usize
}

#[derive(Debug, Clone, PartialEq)]
pub enum Block<T = f32> {
    Vgg(VggBlock<T>),
    Inception(InceptionModule<T>),
    Residual(ResidualBlock<T>),
    Separable(SeparableBlock<T>),
    Dense(DenseBlock<T>),
    Transition(TransitionLayer<T>),
    InvertedResidual(InvertedResidual<T>),
    MaxPool(PoolParams),
}

#[derive(Debug, Clone)]
pub enum BlockCache<T> {
    Vgg(VggCache<T>),
    Inception(InceptionCache<T>),
    Residual(ResidualCache<T>),
    Separable(SeparableCache<T>),
    Dense(DenseCache<T>),
    Transition(TransitionCache<T>),
    InvertedResidual(InvertedResidualCache<T>),
    MaxPool(Tensor<T>),
}

impl<T: Element> Block<T> {
    pub fn forward(&self, x: &Tensor<T>, ctx: &mut Ctx<T>) -> BlockResult<(Tensor<T>, BlockCache<T>)> {
        Ok(match self {
            Self::Vgg(b) => {
                let (y, c) = b.forward(x, ctx)?;
                (y, BlockCache::Vgg(c))
            }
            Self::Inception(b) => {
                let (y, c) = b.forward(x, ctx)?;
                (y, BlockCache::Inception(c))
            }
            Self::Residual(b) => {
                let (y, c) = b.forward(x, ctx)?;
                (y, BlockCache::Residual(c))
            }
            Self::Separable(b) => {
                let (y, c) = b.forward(x, ctx)?;
                (y, BlockCache::Separable(c))
            }
            Self::Dense(b) => {
                let (y, c) = b.forward(x, ctx)?;
                (y, BlockCache::Dense(c))
            }
            Self::Transition(b) => {
                let (y, c) = b.forward(x, ctx)?;
                (y, BlockCache::Transition(c))
            }
            Self::InvertedResidual(b) => {
                let (y, c) = b.forward(x, ctx)?;
                (y, BlockCache::InvertedResidual(c))
            }
            Self::MaxPool(p) => (ops::maxpool2d(x, *p)?, BlockCache::MaxPool(x.clone())),
        })
    }

    pub fn backward(&self, cache: &BlockCache<T>, grad_out: &Tensor<T>, grads: &mut Grads<T>) -> BlockResult<Tensor<T>> {
        let g = match (self, cache) {
            (Self::Vgg(b), BlockCache::Vgg(c)) => b.backward(c, grad_out, grads),
            (Self::Inception(b), BlockCache::Inception(c)) => b.backward(c, grad_out, grads),
            (Self::Residual(b), BlockCache::Residual(c)) => b.backward(c, grad_out, grads),
            (Self::Separable(b), BlockCache::Separable(c)) => b.backward(c, grad_out, grads),
            (Self::Dense(b), BlockCache::Dense(c)) => b.backward(c, grad_out, grads),
            (Self::Transition(b), BlockCache::Transition(c)) => b.backward(c, grad_out, grads),
            (Self::InvertedResidual(b), BlockCache::InvertedResidual(c)) => b.backward(c, grad_out, grads),
            (Self::MaxPool(p), BlockCache::MaxPool(x)) => ops::maxpool2d_grad(x, *p, grad_out),
            _ => Err(TensorError::Invalid("block cache does not match block kind".into())),
        }?;
        Ok(g)
    }

    /// Forward pass without retaining activations for backward.
    pub fn infer(&self, x: &Tensor<T>) -> BlockResult<Tensor<T>> {
        let mut ctx = Ctx::infer();
        self.forward(x, &mut ctx).map(|(y, _)| y)
    }
}

impl<T: Element> Parameters<T> for Block<T> {
    fn visit(&self, f: &mut dyn FnMut(&str, &Tensor<T>, TensorRole)) {
        match self {
            Self::Vgg(b) => b.visit(f),
            Self::Inception(b) => b.visit(f),
            Self::Residual(b) => b.visit(f),
            Self::Separable(b) => b.visit(f),
            Self::Dense(b) => b.visit(f),
            Self::Transition(b) => b.visit(f),
            Self::InvertedResidual(b) => b.visit(f),
            Self::MaxPool(_) => {}
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor<T>, TensorRole)) {
        match self {
            Self::Vgg(b) => b.visit_mut(f),
            Self::Inception(b) => b.visit_mut(f),
            Self::Residual(b) => b.visit_mut(f),
            Self::Separable(b) => b.visit_mut(f),
            Self::Dense(b) => b.visit_mut(f),
            Self::Transition(b) => b.visit_mut(f),
            Self::InvertedResidual(b) => b.visit_mut(f),
            Self::MaxPool(_) => {}
        }
    }
}

/// Shortcut used by residual-style blocks: identity, or 1x1/stride projection + BN.
#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Shortcut<T> {
    Identity,
    Projection(crate::layers::ConvUnit<T>),
}

impl<T: Element> Shortcut<T> {
    pub(crate) fn new(prefix: &str, cin: usize, cout: usize, stride: usize, rng: &mut impl Rng) -> Self {
        if stride == 1 && cin == cout {
            Self::Identity
        } else {
            let conv = crate::layers::Conv::new(format!("{prefix}.shortcut"), cin, cout, 1, stride, Padding::Same, false, rng);
            Self::Projection(crate::layers::ConvUnit::new(conv, true, false))
        }
    }

    pub(crate) fn forward(
        &self,
        x: &Tensor<T>,
        ctx: &mut Ctx<T>,
    ) -> crate::Result<(Tensor<T>, Option<crate::layers::ConvUnitCache<T>>)> {
        match self {
            Self::Identity => Ok((x.clone(), None)),
            Self::Projection(u) => u.forward(x, ctx).map(|(y, c)| (y, Some(c))),
        }
    }

    pub(crate) fn backward(
        &self,
        cache: &Option<crate::layers::ConvUnitCache<T>>,
        grad_out: &Tensor<T>,
        grads: &mut Grads<T>,
    ) -> crate::Result<Tensor<T>> {
        match (self, cache) {
            (Self::Identity, _) => Ok(grad_out.clone()),
            (Self::Projection(u), Some(c)) => u.backward(c, grad_out, grads),
            (Self::Projection(_), None) => Err(TensorError::Invalid("shortcut cache missing".into())),
        }
    }

    pub(crate) fn visit(&self, f: &mut dyn FnMut(&str, &Tensor<T>, TensorRole)) {
        if let Self::Projection(u) = self {
            u.visit(f);
        }
    }

    pub(crate) fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor<T>, TensorRole)) {
        if let Self::Projection(u) = self {
            u.visit_mut(f);
        }
    }
}
