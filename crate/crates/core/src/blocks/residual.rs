use rand::Rng;

use super::{bottleneck_width, BlockResult, Shortcut};
use crate::element::Element;
use crate::layers::{Conv, ConvUnit, ConvUnitCache, Ctx, Grads, Parameters, TensorRole};
use crate::ops::{self, Padding};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResidualKind {
    /// conv3x3 -> BN -> ReLU -> conv3x3 -> BN
    Basic,
    /// conv1x1 -> BN -> ReLU -> conv3x3 -> BN -> ReLU -> conv1x1 -> BN
    Bottleneck,
}

/// Post-activation residual block: `relu(F(x) + shortcut(x))`.
///
/// The stride sits on the first 3x3 convolution of the residual branch.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualBlock<T = f32> {
    pub kind: ResidualKind,
    pub branch: Vec<ConvUnit<T>>,
    pub(crate) shortcut: Shortcut<T>,
}

#[derive(Debug, Clone)]
pub struct ResidualCache<T> {
    branch: Vec<ConvUnitCache<T>>,
    shortcut: Option<ConvUnitCache<T>>,
    sum: Tensor<T>,
}

impl<T: Element> ResidualBlock<T> {
    pub fn new(prefix: &str, kind: ResidualKind, cin: usize, cout: usize, stride: usize, rng: &mut impl Rng) -> Self {
        let mut conv = |name: &str, ci, co, k, s| Conv::new(format!("{prefix}.{name}"), ci, co, k, s, Padding::Same, false, rng);
        let branch = match kind {
            ResidualKind::Basic => vec![
                ConvUnit::new(conv("conv1", cin, cout, 3, stride), true, true),
                ConvUnit::new(conv("conv2", cout, cout, 3, 1), true, false),
            ],
            ResidualKind::Bottleneck => {
                let m = bottleneck_width(cout);
                vec![
                    ConvUnit::new(conv("conv1", cin, m, 1, 1), true, true),
                    ConvUnit::new(conv("conv2", m, m, 3, stride), true, true),
                    ConvUnit::new(conv("conv3", m, cout, 1, 1), true, false),
                ]
            }
        };
        Self {
            kind,
            branch,
            shortcut: Shortcut::new(prefix, cin, cout, stride, rng),
        }
    }

    pub fn has_identity_shortcut(&self) -> bool {
        matches!(self.shortcut, Shortcut::Identity)
    }

    pub fn forward(&self, x: &Tensor<T>, ctx: &mut Ctx<T>) -> BlockResult<(Tensor<T>, ResidualCache<T>)> {
        let mut branch = Vec::with_capacity(self.branch.len());
        let mut h = x.clone();
        for u in &self.branch {
            let (y, c) = u.forward(&h, ctx)?;
            branch.push(c);
            h = y;
        }
        let (s, shortcut) = self.shortcut.forward(x, ctx)?;
        let sum = h.add(&s)?;
        Ok((ops::relu(&sum), ResidualCache { branch, shortcut, sum }))
    }

    pub fn backward(&self, cache: &ResidualCache<T>, grad_out: &Tensor<T>, grads: &mut Grads<T>) -> crate::Result<Tensor<T>> {
        let g_sum = ops::relu_grad(&cache.sum, grad_out)?;
        let mut g = g_sum.clone();
        for (u, c) in self.branch.iter().zip(&cache.branch).rev() {
            g = u.backward(c, &g, grads)?;
        }
        g.add_assign(&self.shortcut.backward(&cache.shortcut, &g_sum, grads)?)?;
        Ok(g)
    }
}

impl<T: Element> Parameters<T> for ResidualBlock<T> {
    fn visit(&self, f: &mut dyn FnMut(&str, &Tensor<T>, TensorRole)) {
        self.branch.iter().for_each(|u| u.visit(f));
        self.shortcut.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor<T>, TensorRole)) {
        self.branch.iter_mut().for_each(|u| u.visit_mut(f));
        self.shortcut.visit_mut(f);
    }
}
