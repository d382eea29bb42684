use rand::Rng;

use super::BlockResult;
use crate::element::Element;
use crate::layers::{Conv, ConvUnit, ConvUnitCache, Ctx, Grads, Parameters, TensorRole};
use crate::ops::Padding;
use crate::tensor::Tensor;

/// MobileNetV2 inverted residual with a linear bottleneck:
/// expand 1x1 -> BN -> ReLU -> depthwise 3x3 -> BN -> ReLU -> project 1x1 -> BN.
///
/// The input is added back only when stride is 1 and channel counts match;
/// nothing is applied after the projection.
#[derive(Debug, Clone, PartialEq)]
pub struct InvertedResidual<T = f32> {
    pub expand: ConvUnit<T>,
    pub depthwise: ConvUnit<T>,
    pub project: ConvUnit<T>,
    residual: bool,
}

#[derive(Debug, Clone)]
pub struct InvertedResidualCache<T> {
    units: [ConvUnitCache<T>; 3],
}

impl<T: Element> InvertedResidual<T> {
    pub fn new(prefix: &str, cin: usize, cout: usize, stride: usize, expansion: usize, rng: &mut impl Rng) -> Self {
        let e = expansion * cin;
        let expand = Conv::new(format!("{prefix}.expand"), cin, e, 1, 1, Padding::Valid, false, rng);
        let depthwise = Conv::depthwise(format!("{prefix}.depthwise"), e, 3, stride, false, rng);
        let project = Conv::new(format!("{prefix}.project"), e, cout, 1, 1, Padding::Valid, false, rng);
        Self {
            expand: ConvUnit::new(expand, true, true),
            depthwise: ConvUnit::new(depthwise, true, true),
            project: ConvUnit::new(project, true, false),
            residual: stride == 1 && cin == cout,
        }
    }

    pub fn has_residual(&self) -> bool {
        self.residual
    }

    pub fn expanded_width(&self) -> usize {
        self.expand.conv.out_channels()
    }

    pub fn forward(&self, x: &Tensor<T>, ctx: &mut Ctx<T>) -> BlockResult<(Tensor<T>, InvertedResidualCache<T>)> {
        let (a, c0) = self.expand.forward(x, ctx)?;
        let (b, c1) = self.depthwise.forward(&a, ctx)?;
        let (mut y, c2) = self.project.forward(&b, ctx)?;
        if self.residual {
            y.add_assign(x)?;
        }
        Ok((y, InvertedResidualCache { units: [c0, c1, c2] }))
    }

    pub fn backward(
        &self,
        cache: &InvertedResidualCache<T>,
        grad_out: &Tensor<T>,
        grads: &mut Grads<T>,
    ) -> crate::Result<Tensor<T>> {
        let [c0, c1, c2] = &cache.units;
        let g = self.project.backward(c2, grad_out, grads)?;
        let g = self.depthwise.backward(c1, &g, grads)?;
        let mut g = self.expand.backward(c0, &g, grads)?;
        if self.residual {
            g.add_assign(grad_out)?;
        }
        Ok(g)
    }
}

impl<T: Element> Parameters<T> for InvertedResidual<T> {
    fn visit(&self, f: &mut dyn FnMut(&str, &Tensor<T>, TensorRole)) {
        self.expand.visit(f);
        self.depthwise.visit(f);
        self.project.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor<T>, TensorRole)) {
        self.expand.visit_mut(f);
        self.depthwise.visit_mut(f);
        self.project.visit_mut(f);
    }
}
