use rand::Rng;

use super::BlockResult;
use crate::element::Element;
use crate::layers::{Conv, ConvUnit, ConvUnitCache, Ctx, Grads, Parameters, TensorRole};
use crate::ops::{self, Padding, PoolParams};
use crate::tensor::Tensor;

/// Four parallel branches concatenated on the channel axis, in order:
/// 1x1 | 1x1 -> 3x3 | 1x1 -> 5x5 | 3x3/1 max-pool -> 1x1.
#[derive(Debug, Clone, PartialEq)]
pub struct InceptionModule<T = f32> {
    pub branch1: ConvUnit<T>,
    pub branch3: [ConvUnit<T>; 2],
    pub branch5: [ConvUnit<T>; 2],
    pub branch_pool: ConvUnit<T>,
    pool: PoolParams,
}

#[derive(Debug, Clone)]
pub struct InceptionCache<T> {
    b1: ConvUnitCache<T>,
    b3: [ConvUnitCache<T>; 2],
    b5: [ConvUnitCache<T>; 2],
    pool_input: Tensor<T>,
    bp: ConvUnitCache<T>,
}

impl<T: Element> InceptionModule<T> {
    /// `widths` = `[b1, reduce3, b3, reduce5, b5, bpool]`.
    pub fn new(prefix: &str, cin: usize, widths: [usize; 6], rng: &mut impl Rng) -> Self {
        let [b1, r3, b3, r5, b5, bp] = widths;
        let mut unit = |name: &str, ci: usize, co: usize, k: usize| {
            ConvUnit::new(Conv::new(format!("{prefix}.{name}"), ci, co, k, 1, Padding::Same, true, rng), false, true)
        };
        Self {
            branch1: unit("b1", cin, b1, 1),
            branch3: [unit("b3_reduce", cin, r3, 1), unit("b3", r3, b3, 3)],
            branch5: [unit("b5_reduce", cin, r5, 1), unit("b5", r5, b5, 5)],
            branch_pool: unit("pool_proj", cin, bp, 1),
            pool: PoolParams::new(3, 1, Padding::Same),
        }
    }

    pub fn branch_widths(&self) -> [usize; 4] {
        [
            self.branch1.conv.out_channels(),
            self.branch3[1].conv.out_channels(),
            self.branch5[1].conv.out_channels(),
            self.branch_pool.conv.out_channels(),
        ]
    }

    pub fn forward(&self, x: &Tensor<T>, ctx: &mut Ctx<T>) -> BlockResult<(Tensor<T>, InceptionCache<T>)> {
        let (y1, b1) = self.branch1.forward(x, ctx)?;
        let (r3, c3a) = self.branch3[0].forward(x, ctx)?;
        let (y3, c3b) = self.branch3[1].forward(&r3, ctx)?;
        let (r5, c5a) = self.branch5[0].forward(x, ctx)?;
        let (y5, c5b) = self.branch5[1].forward(&r5, ctx)?;
        let pooled = ops::maxpool2d(x, self.pool)?;
        let (yp, bp) = self.branch_pool.forward(&pooled, ctx)?;
        let y = ops::concat_channels(&[&y1, &y3, &y5, &yp])?;
        Ok((
            y,
            InceptionCache {
                b1,
                b3: [c3a, c3b],
                b5: [c5a, c5b],
                pool_input: x.clone(),
                bp,
            },
        ))
    }

    pub fn backward(&self, cache: &InceptionCache<T>, grad_out: &Tensor<T>, grads: &mut Grads<T>) -> crate::Result<Tensor<T>> {
        let parts = ops::split_channels(grad_out, &self.branch_widths())?;
        let mut gx = self.branch1.backward(&cache.b1, &parts[0], grads)?;
        let g = self.branch3[1].backward(&cache.b3[1], &parts[1], grads)?;
        gx.add_assign(&self.branch3[0].backward(&cache.b3[0], &g, grads)?)?;
        let g = self.branch5[1].backward(&cache.b5[1], &parts[2], grads)?;
        gx.add_assign(&self.branch5[0].backward(&cache.b5[0], &g, grads)?)?;
        let g = self.branch_pool.backward(&cache.bp, &parts[3], grads)?;
        gx.add_assign(&ops::maxpool2d_grad(&cache.pool_input, self.pool, &g)?)?;
        Ok(gx)
    }

    fn units(&self) -> [&ConvUnit<T>; 6] {
        [
            &self.branch1,
            &self.branch3[0],
            &self.branch3[1],
            &self.branch5[0],
            &self.branch5[1],
            &self.branch_pool,
        ]
    }
}

impl<T: Element> Parameters<T> for InceptionModule<T> {
    fn visit(&self, f: &mut dyn FnMut(&str, &Tensor<T>, TensorRole)) {
        self.units().into_iter().for_each(|u| u.visit(f));
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor<T>, TensorRole)) {
        self.branch1.visit_mut(f);
        self.branch3.iter_mut().for_each(|u| u.visit_mut(f));
        self.branch5.iter_mut().for_each(|u| u.visit_mut(f));
        self.branch_pool.visit_mut(f);
    }
}
