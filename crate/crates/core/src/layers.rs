//! Named, parameter-owning wrappers around the kernels, plus the gradient
//! store and forward context shared by blocks and models.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::element::Element;
use crate::error::{Result, TensorError};
use crate::ops::{self, BatchNormCache, BatchNormState, ConvParams, Mode, Padding};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TensorRole {
    /// Learnable; counted by `param_count` and updated by the optimizer.
    Param,
    /// Persistent state that is saved but not learned (running statistics).
    Buffer,
}

/// Walks every named tensor owned by a layer, block or model.
pub trait Parameters<T: Element> {
    fn visit(&self, f: &mut dyn FnMut(&str, &Tensor<T>, TensorRole));
    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor<T>, TensorRole));

    fn param_count(&self) -> usize {
        let mut total = 0;
        self.visit(&mut |_, t, role| {
            if role == TensorRole::Param {
                total += t.len();
            }
        });
        total
    }
}

/// Gradients keyed by parameter name.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Grads<T = f32> {
    map: BTreeMap<String, Tensor<T>>,
}

impl<T: Element> Grads<T> {
    pub fn new() -> Self {
        Self { map: BTreeMap::new() }
    }

    pub fn accumulate(&mut self, name: &str, g: Tensor<T>) -> Result<()> {
        match self.map.get_mut(name) {
            Some(acc) => acc.add_assign(&g),
            None => {
                self.map.insert(name.to_owned(), g);
                Ok(())
            }
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, g: Tensor<T>) {
        self.map.insert(name.into(), g);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.map.get(name)
    }

    pub fn remove(&mut self, name: &str) -> Option<Tensor<T>> {
        self.map.remove(name)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.map.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.map.keys().map(String::as_str)
    }
}

/// Per-pass state: the mode, and train-mode batch-norm updates to apply afterwards.
#[derive(Debug)]
pub struct Ctx<T = f32> {
    pub mode: Mode,
    pub bn_updates: Vec<(String, BatchNormState<T>)>,
}

impl<T: Element> Ctx<T> {
    pub fn new(mode: Mode) -> Self {
        Self {
            mode,
            bn_updates: Vec::new(),
        }
    }

    pub fn train() -> Self {
        Self::new(Mode::Train)
    }

    pub fn infer() -> Self {
        Self::new(Mode::Infer)
    }
}

/// Writes collected running-statistic updates back into their batch-norm layers.
pub fn apply_bn_updates<T: Element, P: Parameters<T> + ?Sized>(target: &mut P, updates: Vec<(String, BatchNormState<T>)>) {
    if updates.is_empty() {
        return;
    }
    let lookup: BTreeMap<String, BatchNormState<T>> = updates.into_iter().collect();
    target.visit_mut(&mut |name, t, role| {
        if role != TensorRole::Buffer {
            return;
        }
        if let Some(prefix) = name.strip_suffix(".running_mean") {
            if let Some(s) = lookup.get(prefix) {
                *t = s.running_mean.clone();
            }
        } else if let Some(prefix) = name.strip_suffix(".running_var") {
            if let Some(s) = lookup.get(prefix) {
                *t = s.running_var.clone();
            }
        }
    });
}

/// He/Kaiming-normal sample, `std = sqrt(2 / fan_in)`.
pub fn he_normal<T: Element>(shape: Vec<usize>, fan_in: usize, rng: &mut impl Rng) -> Tensor<T> {
    let std = (2.0 / fan_in as f64).sqrt();
    let dist = Normal::new(0.0, std).expect("finite std");
    Tensor::from_fn(shape, |_| T::from_f64(dist.sample(rng)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConvKind {
    Standard,
    Depthwise,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Conv<T = f32> {
    pub name: String,
    pub kind: ConvKind,
    pub params: ConvParams<T>,
}

impl<T: Element> Conv<T> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: impl Into<String>,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        padding: Padding,
        bias: bool,
        rng: &mut impl Rng,
    ) -> Self {
        let weights = he_normal(vec![cout, cin, kernel, kernel], cin * kernel * kernel, rng);
        Self {
            name: name.into(),
            kind: ConvKind::Standard,
            params: ConvParams::new(weights, bias.then(|| Tensor::zeros(vec![cout])), stride, padding),
        }
    }

    pub fn depthwise(
        name: impl Into<String>,
        channels: usize,
        kernel: usize,
        stride: usize,
        bias: bool,
        rng: &mut impl Rng,
    ) -> Self {
        let weights = he_normal(vec![channels, 1, kernel, kernel], kernel * kernel, rng);
        Self {
            name: name.into(),
            kind: ConvKind::Depthwise,
            params: ConvParams::new(
                weights,
                bias.then(|| Tensor::zeros(vec![channels])),
                stride,
                Padding::Same,
            ),
        }
    }

    pub fn out_channels(&self) -> usize {
        self.params.weights.shape()[0]
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        match self.kind {
            ConvKind::Standard => ops::conv2d(x, &self.params),
            ConvKind::Depthwise => ops::depthwise_conv2d(x, &self.params),
        }
    }

    /// `x` is the input that was fed to [`Conv::forward`].
    pub fn backward(&self, x: &Tensor<T>, grad_out: &Tensor<T>, grads: &mut Grads<T>) -> Result<Tensor<T>> {
        let g = match self.kind {
            ConvKind::Standard => ops::conv2d_grad(x, &self.params, grad_out)?,
            ConvKind::Depthwise => ops::depthwise_conv2d_grad(x, &self.params, grad_out)?,
        };
        grads.accumulate(&format!("{}.weight", self.name), g.weights)?;
        if let Some(b) = g.bias {
            grads.accumulate(&format!("{}.bias", self.name), b)?;
        }
        Ok(g.input)
    }
}

impl<T: Element> Parameters<T> for Conv<T> {
    fn visit(&self, f: &mut dyn FnMut(&str, &Tensor<T>, TensorRole)) {
        f(&format!("{}.weight", self.name), &self.params.weights, TensorRole::Param);
        if let Some(b) = &self.params.bias {
            f(&format!("{}.bias", self.name), b, TensorRole::Param);
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor<T>, TensorRole)) {
        f(&format!("{}.weight", self.name), &mut self.params.weights, TensorRole::Param);
        if let Some(b) = &mut self.params.bias {
            f(&format!("{}.bias", self.name), b, TensorRole::Param);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm<T = f32> {
    pub name: String,
    pub state: BatchNormState<T>,
}

impl<T: Element> BatchNorm<T> {
    pub fn new(name: impl Into<String>, channels: usize) -> Self {
        Self {
            name: name.into(),
            state: BatchNormState::new(channels),
        }
    }

    pub fn forward(&self, x: &Tensor<T>, ctx: &mut Ctx<T>) -> Result<(Tensor<T>, BatchNormCache<T>)> {
        let out = ops::batchnorm2d(x, &self.state, ctx.mode)?;
        if let Some(state) = out.state {
            ctx.bn_updates.push((self.name.clone(), state));
        }
        Ok((out.output, out.cache))
    }

    pub fn backward(&self, cache: &BatchNormCache<T>, grad_out: &Tensor<T>, grads: &mut Grads<T>) -> Result<Tensor<T>> {
        let g = ops::batchnorm2d_grad(cache, &self.state, grad_out)?;
        grads.accumulate(&format!("{}.gamma", self.name), g.gamma)?;
        grads.accumulate(&format!("{}.beta", self.name), g.beta)?;
        Ok(g.input)
    }
}

impl<T: Element> Parameters<T> for BatchNorm<T> {
    fn visit(&self, f: &mut dyn FnMut(&str, &Tensor<T>, TensorRole)) {
        let n = &self.name;
        f(&format!("{n}.gamma"), &self.state.gamma, TensorRole::Param);
        f(&format!("{n}.beta"), &self.state.beta, TensorRole::Param);
        f(&format!("{n}.running_mean"), &self.state.running_mean, TensorRole::Buffer);
        f(&format!("{n}.running_var"), &self.state.running_var, TensorRole::Buffer);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor<T>, TensorRole)) {
        let n = self.name.clone();
        f(&format!("{n}.gamma"), &mut self.state.gamma, TensorRole::Param);
        f(&format!("{n}.beta"), &mut self.state.beta, TensorRole::Param);
        f(&format!("{n}.running_mean"), &mut self.state.running_mean, TensorRole::Buffer);
        f(&format!("{n}.running_var"), &mut self.state.running_var, TensorRole::Buffer);
    }
}

/// `conv -> [BN] -> [ReLU]`, the post-activation unit.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvUnit<T = f32> {
    pub conv: Conv<T>,
    pub bn: Option<BatchNorm<T>>,
    pub relu: bool,
}

#[derive(Debug, Clone)]
pub struct ConvUnitCache<T> {
    input: Tensor<T>,
    bn: Option<BatchNormCache<T>>,
    /// Input to the ReLU, kept only when the unit activates.
    pre_act: Option<Tensor<T>>,
}

impl<T: Element> ConvUnit<T> {
    pub fn new(conv: Conv<T>, batch_norm: bool, relu: bool) -> Self {
        let bn = batch_norm.then(|| BatchNorm::new(format!("{}.bn", conv.name), conv.out_channels()));
        Self { conv, bn, relu }
    }

    pub fn forward(&self, x: &Tensor<T>, ctx: &mut Ctx<T>) -> Result<(Tensor<T>, ConvUnitCache<T>)> {
        let mut y = self.conv.forward(x)?;
        let bn = match &self.bn {
            Some(bn) => {
                let (out, cache) = bn.forward(&y, ctx)?;
                y = out;
                Some(cache)
            }
            None => None,
        };
        let pre_act = if self.relu {
            let a = ops::relu(&y);
            Some(std::mem::replace(&mut y, a))
        } else {
            None
        };
        Ok((
            y,
            ConvUnitCache {
                input: x.clone(),
                bn,
                pre_act,
            },
        ))
    }

    pub fn backward(&self, cache: &ConvUnitCache<T>, grad_out: &Tensor<T>, grads: &mut Grads<T>) -> Result<Tensor<T>> {
        let mut g = match &cache.pre_act {
            Some(z) => ops::relu_grad(z, grad_out)?,
            None => grad_out.clone(),
        };
        if let (Some(bn), Some(bc)) = (&self.bn, &cache.bn) {
            g = bn.backward(bc, &g, grads)?;
        }
        self.conv.backward(&cache.input, &g, grads)
    }
}

impl<T: Element> Parameters<T> for ConvUnit<T> {
    fn visit(&self, f: &mut dyn FnMut(&str, &Tensor<T>, TensorRole)) {
        self.conv.visit(f);
        if let Some(bn) = &self.bn {
            bn.visit(f);
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor<T>, TensorRole)) {
        self.conv.visit_mut(f);
        if let Some(bn) = &mut self.bn {
            bn.visit_mut(f);
        }
    }
}

/// `BN -> ReLU -> conv`, the pre-activation unit used inside dense blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct PreActUnit<T = f32> {
    pub bn: BatchNorm<T>,
    pub conv: Conv<T>,
}

#[derive(Debug, Clone)]
pub struct PreActCache<T> {
    bn: BatchNormCache<T>,
    normed: Tensor<T>,
    activated: Tensor<T>,
}

impl<T: Element> PreActUnit<T> {
    pub fn new(conv: Conv<T>, in_channels: usize) -> Self {
        Self {
            bn: BatchNorm::new(format!("{}.bn", conv.name), in_channels),
            conv,
        }
    }

    pub fn forward(&self, x: &Tensor<T>, ctx: &mut Ctx<T>) -> Result<(Tensor<T>, PreActCache<T>)> {
        let (normed, bn) = self.bn.forward(x, ctx)?;
        let activated = ops::relu(&normed);
        let y = self.conv.forward(&activated)?;
        Ok((y, PreActCache { bn, normed, activated }))
    }

    pub fn backward(&self, cache: &PreActCache<T>, grad_out: &Tensor<T>, grads: &mut Grads<T>) -> Result<Tensor<T>> {
        let g = self.conv.backward(&cache.activated, grad_out, grads)?;
        let g = ops::relu_grad(&cache.normed, &g)?;
        self.bn.backward(&cache.bn, &g, grads)
    }
}

impl<T: Element> Parameters<T> for PreActUnit<T> {
    fn visit(&self, f: &mut dyn FnMut(&str, &Tensor<T>, TensorRole)) {
        self.bn.visit(f);
        self.conv.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor<T>, TensorRole)) {
        self.bn.visit_mut(f);
        self.conv.visit_mut(f);
    }
}

/// Fully connected classifier head: `[N, D] x [D, K] + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear<T = f32> {
    pub name: String,
    pub weights: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Element> Linear<T> {
    pub fn new(name: impl Into<String>, inputs: usize, outputs: usize, rng: &mut impl Rng) -> Self {
        Self {
            name: name.into(),
            weights: he_normal(vec![inputs, outputs], inputs, rng),
            bias: Tensor::zeros(vec![outputs]),
        }
    }

    /// He-normal weights multiplied by `gain`, zero bias.
    pub fn scaled(name: impl Into<String>, inputs: usize, outputs: usize, gain: f64, rng: &mut impl Rng) -> Self {
        let mut l = Self::new(name, inputs, outputs, rng);
        l.weights = l.weights.scale(T::from_f64(gain));
        l
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        ops::linear(x, &self.weights, Some(&self.bias))
    }

    pub fn backward(&self, x: &Tensor<T>, grad_out: &Tensor<T>, grads: &mut Grads<T>) -> Result<Tensor<T>> {
        let g = ops::linear_grad(x, &self.weights, true, grad_out)?;
        grads.accumulate(&format!("{}.weight", self.name), g.weights)?;
        let bias = g
            .bias
            .ok_or_else(|| TensorError::Invalid("linear bias gradient missing".into()))?;
        grads.accumulate(&format!("{}.bias", self.name), bias)?;
        Ok(g.input)
    }
}

impl<T: Element> Parameters<T> for Linear<T> {
    fn visit(&self, f: &mut dyn FnMut(&str, &Tensor<T>, TensorRole)) {
        f(&format!("{}.weight", self.name), &self.weights, TensorRole::Param);
        f(&format!("{}.bias", self.name), &self.bias, TensorRole::Param);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor<T>, TensorRole)) {
        f(&format!("{}.weight", self.name), &mut self.weights, TensorRole::Param);
        f(&format!("{}.bias", self.name), &mut self.bias, TensorRole::Param);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_conv_param_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let c = Conv::<f32>::new("c", 3, 8, 3, 1, Padding::Same, true, &mut rng);
        assert_eq!(c.param_count(), 224);
        let l = Linear::<f32>::new("fc", 10, 24, &mut rng);
        assert_eq!(l.param_count(), 264);
    }

    #[test]
    fn bn_updates_land_in_running_stats() {
        let mut unit = ConvUnit::new(
            Conv::<f64>::new("u", 1, 2, 1, 1, Padding::Valid, false, &mut ChaCha8Rng::seed_from_u64(1)),
            true,
            true,
        );
        let x = Tensor::from_fn(vec![2, 1, 3, 3], |i| i as f64);
        let mut ctx = Ctx::train();
        unit.forward(&x, &mut ctx).unwrap();
        assert_eq!(ctx.bn_updates.len(), 1);
        apply_bn_updates(&mut unit, ctx.bn_updates);
        let bn = unit.bn.as_ref().unwrap();
        assert!(bn.state.running_mean.data().iter().any(|&m| m != 0.0));
    }

    #[test]
    fn grads_accumulate_by_name() {
        let mut g = Grads::<f32>::new();
        g.accumulate("a", Tensor::full(vec![2], 1.0)).unwrap();
        g.accumulate("a", Tensor::full(vec![2], 2.0)).unwrap();
        assert_eq!(g.get("a").unwrap().data(), &[3.0, 3.0]);
        assert!(g.accumulate("a", Tensor::full(vec![3], 1.0)).is_err());
    }
}
