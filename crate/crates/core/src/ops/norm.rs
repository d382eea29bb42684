//! Per-channel batch normalization over `N x H x W`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::element::Element;
use crate::error::{Result, TensorError};
use crate::tensor::Tensor;

pub const BN_EPSILON: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Infer,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormState<T = f32> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
    pub epsilon: T,
    pub momentum: T,
}

impl<T: Element> BatchNormState<T> {
    /// gamma 1, beta 0, running mean 0, running var 1.
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: Tensor::full(vec![channels], T::one()),
            beta: Tensor::zeros(vec![channels]),
            running_mean: Tensor::zeros(vec![channels]),
            running_var: Tensor::full(vec![channels], T::one()),
            epsilon: T::from_f64(BN_EPSILON),
            momentum: T::from_f64(BN_MOMENTUM),
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    /// `new = (1 - m) * old + m * batch`; the variance uses the unbiased batch estimate.
    pub fn with_batch_stats(&self, stats: &BatchStats<T>) -> Self {
        let m = self.momentum;
        let keep = T::one() - m;
        let correction = if stats.count > 1 {
            T::from_f64(stats.count as f64 / (stats.count - 1) as f64)
        } else {
            T::one()
        };
        let mut next = self.clone();
        for (c, (rm, rv)) in next
            .running_mean
            .data_mut()
            .iter_mut()
            .zip(next.running_var.data_mut().iter_mut())
            .enumerate()
        {
            *rm = keep * *rm + m * stats.mean[c];
            *rv = keep * *rv + m * stats.var[c] * correction;
        }
        next
    }
}

/// Batch statistics from one train-mode pass; `var` is the biased estimate used to normalize.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats<T = f32> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
    pub count: usize,
}

#[derive(Debug, Clone)]
pub struct BatchNormCache<T = f32> {
    mode: Mode,
    xhat: Tensor<T>,
    inv_std: Vec<T>,
}

#[derive(Debug, Clone)]
pub struct BatchNormOutput<T = f32> {
    pub output: Tensor<T>,
    pub cache: BatchNormCache<T>,
    /// Updated running statistics; present only in train mode.
    pub state: Option<BatchNormState<T>>,
    pub stats: Option<BatchStats<T>>,
}

#[derive(Debug, Clone)]
pub struct BatchNormGrads<T = f32> {
    pub input: Tensor<T>,
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
}

fn channel_values<T: Element>(data: &[T], n: usize, c: usize, plane: usize, ch: usize) -> impl Iterator<Item = T> + '_ {
    (0..n).flat_map(move |b| data[(b * c + ch) * plane..(b * c + ch + 1) * plane].iter().copied())
}

pub fn batchnorm2d<T: Element>(input: &Tensor<T>, state: &BatchNormState<T>, mode: Mode) -> Result<BatchNormOutput<T>> {
    let [n, c, h, w] = input.dims4("batchnorm2d")?;
    if state.channels() != c {
        return Err(TensorError::Dim {
            op: "batchnorm2d",
            axis: "channel",
            expected: state.channels(),
            actual: c,
        });
    }
    let plane = h * w;
    let x = input.data();

    let stats = match mode {
        Mode::Train => {
            let count = n * plane;
            let inv = T::one() / T::from_f64(count as f64);
            let (mean, var): (Vec<T>, Vec<T>) = (0..c)
                .into_par_iter()
                .map(|ch| {
                    let mean = channel_values(x, n, c, plane, ch).sum::<T>() * inv;
                    let var = channel_values(x, n, c, plane, ch)
                        .map(|v| (v - mean) * (v - mean))
                        .sum::<T>()
                        * inv;
                    (mean, var)
                })
                .unzip();
            Some(BatchStats { mean, var, count })
        }
        Mode::Infer => None,
    };

    let (mean, var): (&[T], &[T]) = match &stats {
        Some(s) => (&s.mean, &s.var),
        None => (state.running_mean.data(), state.running_var.data()),
    };
    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + state.epsilon).sqrt()).collect();

    let mut xhat = vec![T::zero(); x.len()];
    let mut out = vec![T::zero(); x.len()];
    xhat.par_chunks_mut(plane)
        .zip(out.par_chunks_mut(plane))
        .zip(x.par_chunks(plane))
        .enumerate()
        .for_each(|(idx, ((xh, o), xi))| {
            let ch = idx % c;
            let (g, b) = (state.gamma.data()[ch], state.beta.data()[ch]);
            for ((xh, o), &v) in xh.iter_mut().zip(o.iter_mut()).zip(xi) {
                *xh = (v - mean[ch]) * inv_std[ch];
                *o = g * *xh + b;
            }
        });

    let output = Tensor::from_parts_unchecked(input.shape().to_vec(), out);
    Ok(BatchNormOutput {
        output,
        cache: BatchNormCache {
            mode,
            xhat: Tensor::from_parts_unchecked(input.shape().to_vec(), xhat),
            inv_std,
        },
        state: stats.as_ref().map(|s| state.with_batch_stats(s)),
        stats,
    })
}

pub fn batchnorm2d_grad<T: Element>(
    cache: &BatchNormCache<T>,
    state: &BatchNormState<T>,
    grad_out: &Tensor<T>,
) -> Result<BatchNormGrads<T>> {
    if grad_out.shape() != cache.xhat.shape() {
        return Err(TensorError::Invalid(format!(
            "batchnorm2d_grad: gradient shape {:?} does not match input {:?}",
            grad_out.shape(),
            cache.xhat.shape()
        )));
    }
    let [n, c, h, w] = grad_out.dims4("batchnorm2d_grad")?;
    let plane = h * w;
    let (go, xh) = (grad_out.data(), cache.xhat.data());

    let (dgamma, dbeta): (Vec<T>, Vec<T>) = (0..c)
        .into_par_iter()
        .map(|ch| {
            let dg = channel_values(go, n, c, plane, ch)
                .zip(channel_values(xh, n, c, plane, ch))
                .map(|(g, x)| g * x)
                .sum::<T>();
            (dg, channel_values(go, n, c, plane, ch).sum::<T>())
        })
        .unzip();

    let m = T::from_f64((n * plane) as f64);
    let mut gx = vec![T::zero(); go.len()];
    gx.par_chunks_mut(plane).enumerate().for_each(|(idx, gxp)| {
        let ch = idx % c;
        let base = idx * plane;
        let scale = state.gamma.data()[ch] * cache.inv_std[ch];
        match cache.mode {
            Mode::Infer => {
                for (g, &d) in gxp.iter_mut().zip(&go[base..base + plane]) {
                    *g = d * scale;
                }
            }
            Mode::Train => {
                // dx = gamma * inv_std / M * (M * dy - sum(dy) - xhat * sum(dy * xhat))
                let k = scale / m;
                for (i, g) in gxp.iter_mut().enumerate() {
                    let j = base + i;
                    *g = k * (m * go[j] - dbeta[ch] - xh[j] * dgamma[ch]);
                }
            }
        }
    });

    Ok(BatchNormGrads {
        input: Tensor::from_parts_unchecked(grad_out.shape().to_vec(), gx),
        gamma: Tensor::from_parts_unchecked(vec![c], dgamma),
        beta: Tensor::from_parts_unchecked(vec![c], dbeta),
    })
}
