use rand::Rng;

use super::{BlockResult, Shortcut};
use crate::element::Element;
use crate::layers::{BatchNorm, Conv, ConvUnitCache, Ctx, Grads, Parameters, TensorRole};
use crate::ops::{self, BatchNormCache, Padding};
use crate::tensor::Tensor;

/// Depthwise 3x3 -> pointwise 1x1 -> BN.
#[derive(Debug, Clone, PartialEq)]
pub struct SepConv<T = f32> {
    pub depthwise: Conv<T>,
    pub pointwise: Conv<T>,
    pub bn: BatchNorm<T>,
}

/// Xception-style unit: `repeat` separable convs, ReLU between them and after
/// the shortcut sum. With one conv: `relu(BN(pointwise(depthwise(x))) + shortcut(x))`.
#[derive(Debug, Clone, PartialEq)]
pub struct SeparableBlock<T = f32> {
    pub layers: Vec<SepConv<T>>,
    pub(crate) shortcut: Shortcut<T>,
}

#[derive(Debug, Clone)]
struct SepConvCache<T> {
    input: Tensor<T>,
    dw_out: Tensor<T>,
    bn: BatchNormCache<T>,
    /// BN output, before the ReLU or the shortcut sum.
    out: Tensor<T>,
}

#[derive(Debug, Clone)]
pub struct SeparableCache<T> {
    layers: Vec<SepConvCache<T>>,
    shortcut: Option<ConvUnitCache<T>>,
    sum: Tensor<T>,
}

impl<T: Element> SepConv<T> {
    fn new(prefix: &str, cin: usize, cout: usize, stride: usize, rng: &mut impl Rng) -> Self {
        Self {
            depthwise: Conv::depthwise(format!("{prefix}.depthwise"), cin, 3, stride, false, rng),
            pointwise: Conv::new(format!("{prefix}.pointwise"), cin, cout, 1, 1, Padding::Valid, false, rng),
            bn: BatchNorm::new(format!("{prefix}.bn"), cout),
        }
    }
}

impl<T: Element> SeparableBlock<T> {
    /// Layer names: `{prefix}.depthwise` for the first conv, `{prefix}.sep{i}.depthwise` for the i-th after it.
    pub fn new(prefix: &str, cin: usize, cout: usize, stride: usize, repeat: usize, rng: &mut impl Rng) -> Self {
        let mut layers = vec![SepConv::new(prefix, cin, cout, stride, rng)];
        for i in 2..=repeat {
            layers.push(SepConv::new(&format!("{prefix}.sep{i}"), cout, cout, 1, rng));
        }
        Self {
            layers,
            shortcut: Shortcut::new(prefix, cin, cout, stride, rng),
        }
    }

    pub fn forward(&self, x: &Tensor<T>, ctx: &mut Ctx<T>) -> BlockResult<(Tensor<T>, SeparableCache<T>)> {
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        for (i, l) in self.layers.iter().enumerate() {
            let dw_out = l.depthwise.forward(&h)?;
            let pw = l.pointwise.forward(&dw_out)?;
            let (out, bn) = l.bn.forward(&pw, ctx)?;
            let next = if i + 1 < self.layers.len() { ops::relu(&out) } else { out.clone() };
            caches.push(SepConvCache {
                input: std::mem::replace(&mut h, next),
                dw_out,
                bn,
                out,
            });
        }
        let (s, shortcut) = self.shortcut.forward(x, ctx)?;
        let sum = h.add(&s)?;
        Ok((
            ops::relu(&sum),
            SeparableCache {
                layers: caches,
                shortcut,
                sum,
            },
        ))
    }

    pub fn backward(&self, cache: &SeparableCache<T>, grad_out: &Tensor<T>, grads: &mut Grads<T>) -> crate::Result<Tensor<T>> {
        let g_sum = ops::relu_grad(&cache.sum, grad_out)?;
        let mut g = g_sum.clone();
        for (i, (l, c)) in self.layers.iter().zip(&cache.layers).enumerate().rev() {
            if i + 1 < self.layers.len() {
                g = ops::relu_grad(&c.out, &g)?;
            }
            g = l.bn.backward(&c.bn, &g, grads)?;
            g = l.pointwise.backward(&c.dw_out, &g, grads)?;
            g = l.depthwise.backward(&c.input, &g, grads)?;
        }
        g.add_assign(&self.shortcut.backward(&cache.shortcut, &g_sum, grads)?)?;
        Ok(g)
    }
}

impl<T: Element> Parameters<T> for SeparableBlock<T> {
    fn visit(&self, f: &mut dyn FnMut(&str, &Tensor<T>, TensorRole)) {
        for l in &self.layers {
            l.depthwise.visit(f);
            l.pointwise.visit(f);
            l.bn.visit(f);
        }
        self.shortcut.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor<T>, TensorRole)) {
        for l in &mut self.layers {
            l.depthwise.visit_mut(f);
            l.pointwise.visit_mut(f);
            l.bn.visit_mut(f);
        }
        self.shortcut.visit_mut(f);
    }
}
