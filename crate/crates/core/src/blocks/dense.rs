use rand::Rng;

use super::{dense_bottleneck, BlockResult};
use crate::element::Element;
use crate::layers::{Conv, Ctx, Grads, Parameters, PreActCache, PreActUnit, TensorRole};
use crate::ops::{self, Padding};
use crate::tensor::Tensor;

/// One dense layer: BN -> ReLU -> conv1x1 (4g) -> BN -> ReLU -> conv3x3 (g).
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer<T = f32> {
    pub bottleneck: PreActUnit<T>,
    pub conv: PreActUnit<T>,
}

/// Layer `i` sees the concatenation of the block input and layers `0..i`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseBlock<T = f32> {
    pub layers: Vec<DenseLayer<T>>,
    in_channels: usize,
    growth: usize,
}

#[derive(Debug, Clone)]
pub struct DenseCache<T> {
    layers: Vec<(PreActCache<T>, PreActCache<T>)>,
}

impl<T: Element> DenseBlock<T> {
    pub fn new(prefix: &str, cin: usize, layers: usize, growth: usize, rng: &mut impl Rng) -> Self {
        let b = dense_bottleneck(growth);
        let layers = (0..layers)
            .map(|i| {
                let c = cin + i * growth;
                let p = format!("{prefix}.layer{i}");
                let c1 = Conv::new(format!("{p}.conv1"), c, b, 1, 1, Padding::Valid, false, rng);
                let c2 = Conv::new(format!("{p}.conv2"), b, growth, 3, 1, Padding::Same, false, rng);
                DenseLayer {
                    bottleneck: PreActUnit::new(c1, c),
                    conv: PreActUnit::new(c2, b),
                }
            })
            .collect();
        Self {
            layers,
            in_channels: cin,
            growth,
        }
    }

    pub fn forward(&self, x: &Tensor<T>, ctx: &mut Ctx<T>) -> BlockResult<(Tensor<T>, DenseCache<T>)> {
        let mut features = x.clone();
        let mut caches = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let (mid, c1) = layer.bottleneck.forward(&features, ctx)?;
            let (new, c2) = layer.conv.forward(&mid, ctx)?;
            features = ops::concat_channels(&[&features, &new])?;
            caches.push((c1, c2));
        }
        Ok((features, DenseCache { layers: caches }))
    }

    pub fn backward(&self, cache: &DenseCache<T>, grad_out: &Tensor<T>, grads: &mut Grads<T>) -> crate::Result<Tensor<T>> {
        // grad_out covers [input | new_0 | ... | new_{L-1}]; peel layers from the back
        let mut g_features = grad_out.clone();
        for (i, (layer, (c1, c2))) in self.layers.iter().zip(&cache.layers).enumerate().rev() {
            let consumed = self.in_channels + i * self.growth;
            let mut parts = ops::split_channels(&g_features, &[consumed, self.growth])?;
            let g_new = parts.pop().expect("two parts");
            let mut g_prev = parts.pop().expect("two parts");
            let g_mid = layer.conv.backward(c2, &g_new, grads)?;
            g_prev.add_assign(&layer.bottleneck.backward(c1, &g_mid, grads)?)?;
            g_features = g_prev;
        }
        Ok(g_features)
    }
}

impl<T: Element> Parameters<T> for DenseBlock<T> {
    fn visit(&self, f: &mut dyn FnMut(&str, &Tensor<T>, TensorRole)) {
        for l in &self.layers {
            l.bottleneck.visit(f);
            l.conv.visit(f);
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor<T>, TensorRole)) {
        for l in &mut self.layers {
            l.bottleneck.visit_mut(f);
            l.conv.visit_mut(f);
        }
    }
}

/// BN -> ReLU -> conv1x1 (compressed width) -> 2x2/2 average pool.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionLayer<T = f32> {
    pub unit: PreActUnit<T>,
}

#[derive(Debug, Clone)]
pub struct TransitionCache<T> {
    unit: PreActCache<T>,
    conv_shape: Vec<usize>,
}

impl<T: Element> TransitionLayer<T> {
    pub fn new(prefix: &str, cin: usize, cout: usize, rng: &mut impl Rng) -> Self {
        let conv = Conv::new(format!("{prefix}.conv"), cin, cout, 1, 1, Padding::Valid, false, rng);
        Self {
            unit: PreActUnit::new(conv, cin),
        }
    }

    pub fn forward(&self, x: &Tensor<T>, ctx: &mut Ctx<T>) -> BlockResult<(Tensor<T>, TransitionCache<T>)> {
        let (y, unit) = self.unit.forward(x, ctx)?;
        let pooled = ops::avg_pool2d(&y, 2, 2)?;
        Ok((
            pooled,
            TransitionCache {
                unit,
                conv_shape: y.shape().to_vec(),
            },
        ))
    }

    pub fn backward(&self, cache: &TransitionCache<T>, grad_out: &Tensor<T>, grads: &mut Grads<T>) -> crate::Result<Tensor<T>> {
        let g = ops::avg_pool2d_grad(&cache.conv_shape, 2, 2, grad_out)?;
        self.unit.backward(&cache.unit, &g, grads)
    }
}

impl<T: Element> Parameters<T> for TransitionLayer<T> {
    fn visit(&self, f: &mut dyn FnMut(&str, &Tensor<T>, TensorRole)) {
        self.unit.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor<T>, TensorRole)) {
        self.unit.visit_mut(f);
    }
}
