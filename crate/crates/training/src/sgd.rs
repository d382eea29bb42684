use std::collections::{BTreeMap, BTreeSet};

use signforge_core::layers::{Grads, Parameters, TensorRole};
use signforge_core::{Element, Tensor};

use crate::error::{Result, TrainError};

/// Momentum buffers keyed by parameter name.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Velocity<T = f32> {
    pub buffers: BTreeMap<String, Tensor<T>>,
}

/// `v <- momentum * v + g; p <- p - lr * v` for every learnable tensor.
///
/// `grads` must name exactly the model's parameters.
pub fn sgd_step<T: Element, P: Parameters<T> + ?Sized>(
    model: &mut P,
    grads: &Grads<T>,
    lr: f64,
    momentum: f64,
    velocity: &mut Velocity<T>,
) -> Result<()> {
    let mut names = BTreeSet::new();
    model.visit(&mut |n, _, role| {
        if role == TensorRole::Param {
            names.insert(n.to_owned());
        }
    });
    if let Some(n) = names.iter().find(|n| grads.get(n).is_none()) {
        return Err(TrainError::MissingGrad(n.clone()));
    }
    if let Some(n) = grads.names().find(|n| !names.contains(*n)) {
        return Err(TrainError::UnexpectedGrad(n.to_owned()));
    }
    let (lr, mu) = (T::from_f64(lr), T::from_f64(momentum));
    let mut mismatch = None;
    model.visit_mut(&mut |name, p, role| {
        if role != TensorRole::Param {
            return;
        }
        let g = grads.get(name).expect("checked above");
        if g.shape() != p.shape() {
            mismatch.get_or_insert_with(|| name.to_owned());
            return;
        }
        if momentum == 0.0 {
            for (w, &d) in p.data_mut().iter_mut().zip(g.data()) {
                *w -= lr * d;
            }
            return;
        }
        let v = velocity
            .buffers
            .entry(name.to_owned())
            .or_insert_with(|| Tensor::zeros(g.shape().to_vec()));
        for ((w, vel), &d) in p.data_mut().iter_mut().zip(v.data_mut()).zip(g.data()) {
            *vel = mu * *vel + d;
            *w -= lr * *vel;
        }
    });
    match mismatch {
        Some(n) => Err(TrainError::UnexpectedGrad(format!("{n} (shape mismatch)"))),
        None => Ok(()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Scalar(Tensor<f64>);

    impl Parameters<f64> for Scalar {
        fn visit(&self, f: &mut dyn FnMut(&str, &Tensor<f64>, TensorRole)) {
            f("p", &self.0, TensorRole::Param)
        }
        fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor<f64>, TensorRole)) {
            f("p", &mut self.0, TensorRole::Param)
        }
    }

    fn grad(v: f64) -> Grads<f64> {
        let mut g = Grads::new();
        g.insert("p", Tensor::full(vec![1], v));
        g
    }

    #[test]
    fn plain_step_arithmetic() {
        let mut m = Scalar(Tensor::full(vec![1], 1.0));
        sgd_step(&mut m, &grad(0.5), 0.1, 0.0, &mut Velocity::default()).unwrap();
        assert!((m.0.data()[0] - 0.95).abs() < 1e-12);
        sgd_step(&mut m, &grad(0.0), 0.1, 0.0, &mut Velocity::default()).unwrap();
        assert!((m.0.data()[0] - 0.95).abs() < 1e-12);
    }

    #[test]
    fn quadratic_bowl_converges() {
        let mut m = Scalar(Tensor::full(vec![1], 1.0));
        let mut v = Velocity::default();
        for _ in 0..50 {
            let p = m.0.data()[0];
            sgd_step(&mut m, &grad(2.0 * p), 0.1, 0.0, &mut v).unwrap();
        }
        assert!(m.0.data()[0].abs() < 1e-4);
        assert!((m.0.data()[0] - 0.8f64.powi(50)).abs() < 1e-15);
    }

    #[test]
    fn momentum_accumulates() {
        let mut m = Scalar(Tensor::full(vec![1], 0.0));
        let mut v = Velocity::default();
        sgd_step(&mut m, &grad(1.0), 1.0, 0.5, &mut v).unwrap();
        sgd_step(&mut m, &grad(1.0), 1.0, 0.5, &mut v).unwrap();
        assert!((m.0.data()[0] + 2.5).abs() < 1e-12);
    }

    #[test]
    fn misaligned_grads_rejected() {
        let mut m = Scalar(Tensor::full(vec![1], 0.0));
        assert!(matches!(
            sgd_step(&mut m, &Grads::new(), 0.1, 0.0, &mut Velocity::default()),
            Err(TrainError::MissingGrad(_))
        ));
        let mut g = grad(1.0);
        g.insert("q", Tensor::full(vec![1], 1.0));
        assert!(matches!(
            sgd_step(&mut m, &g, 0.1, 0.0, &mut Velocity::default()),
            Err(TrainError::UnexpectedGrad(_))
        ));
    }
}
