use rand::Rng;

use super::BlockResult;
use crate::element::Element;
use crate::layers::{Conv, ConvUnit, ConvUnitCache, Ctx, Grads, Parameters, TensorRole};
use crate::ops::{self, Padding, PoolParams};
use crate::tensor::Tensor;

/// Stacked 3x3 same convolutions with ReLU, closed by a 2x2/2 max-pool. No batch norm.
#[derive(Debug, Clone, PartialEq)]
pub struct VggBlock<T = f32> {
    pub convs: Vec<ConvUnit<T>>,
    pool: PoolParams,
}

#[derive(Debug, Clone)]
pub struct VggCache<T> {
    units: Vec<ConvUnitCache<T>>,
    pool_input: Tensor<T>,
}

impl<T: Element> VggBlock<T> {
    pub fn new(prefix: &str, cin: usize, convs: usize, channels: usize, rng: &mut impl Rng) -> Self {
        let convs = (0..convs)
            .map(|i| {
                let c_in = if i == 0 { cin } else { channels };
                let conv = Conv::new(format!("{prefix}.conv{i}"), c_in, channels, 3, 1, Padding::Same, true, rng);
                ConvUnit::new(conv, false, true)
            })
            .collect();
        Self {
            convs,
            pool: PoolParams::new(2, 2, Padding::Valid),
        }
    }

    pub fn forward(&self, x: &Tensor<T>, ctx: &mut Ctx<T>) -> BlockResult<(Tensor<T>, VggCache<T>)> {
        let mut units = Vec::with_capacity(self.convs.len());
        let mut h = x.clone();
        for u in &self.convs {
            let (y, c) = u.forward(&h, ctx)?;
            units.push(c);
            h = y;
        }
        let y = ops::maxpool2d(&h, self.pool)?;
        Ok((y, VggCache { units, pool_input: h }))
    }

    pub fn backward(&self, cache: &VggCache<T>, grad_out: &Tensor<T>, grads: &mut Grads<T>) -> crate::Result<Tensor<T>> {
        let mut g = ops::maxpool2d_grad(&cache.pool_input, self.pool, grad_out)?;
        for (u, c) in self.convs.iter().zip(&cache.units).rev() {
            g = u.backward(c, &g, grads)?;
        }
        Ok(g)
    }
}

impl<T: Element> Parameters<T> for VggBlock<T> {
    fn visit(&self, f: &mut dyn FnMut(&str, &Tensor<T>, TensorRole)) {
        self.convs.iter().for_each(|u| u.visit(f));
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor<T>, TensorRole)) {
        self.convs.iter_mut().for_each(|u| u.visit_mut(f));
    }
}
