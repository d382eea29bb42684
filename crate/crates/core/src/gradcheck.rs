//! Central finite-difference gradient checking.
//!
//! A check perturbs selected coordinates of a tensor by `±h`, evaluates a
//! scalar function, and compares `(f(x+h) - f(x-h)) / 2h` with the analytic
//! gradient. Relative error per coordinate is `|a - n| / max(|a|, |n|, floor)`;
//! the floor keeps coordinates whose true gradient is ~0 from dividing noise by
//! noise.

use rand::seq::index::sample;
use rand::Rng;

use crate::element::Element;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy)]
pub struct GradCheck {
    pub step: f64,
    pub floor: f64,
    /// Coordinates sampled per tensor; `None` checks every coordinate.
    pub max_coords: Option<usize>,
}

impl GradCheck {
    /// Settings for the `f64` checking mode.
    pub fn f64_mode() -> Self {
        Self {
            step: 1e-6,
            floor: 1e-3,
            max_coords: Some(48),
        }
    }

    /// Settings for production `f32` kernels.
    pub fn f32_mode() -> Self {
        Self {
            step: 1e-3,
            // f32 forward roundoff divided by 2h is ~1e-4 of the loss scale
            floor: 1e-1,
            max_coords: Some(48),
        }
    }

    pub fn relative_error(&self, analytic: f64, numeric: f64) -> f64 {
        (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(self.floor)
    }

    /// Maximum relative error over the checked coordinates of `x`.
    pub fn check<T: Element>(
        &self,
        x: &Tensor<T>,
        analytic: &Tensor<T>,
        rng: &mut impl Rng,
        mut f: impl FnMut(&Tensor<T>) -> f64,
    ) -> GradCheckReport {
        assert_eq!(x.shape(), analytic.shape(), "analytic gradient shape");
        let coords: Vec<usize> = match self.max_coords {
            Some(k) if k < x.len() => sample(rng, x.len(), k).into_vec(),
            _ => (0..x.len()).collect(),
        };
        let h = T::from_f64(self.step);
        let denom = 2.0 * h.as_f64();
        let mut probe = x.clone();
        let mut report = GradCheckReport::default();
        for &i in &coords {
            let orig = probe.data()[i];
            probe.data_mut()[i] = orig + h;
            let plus = f(&probe);
            probe.data_mut()[i] = orig - h;
            let minus = f(&probe);
            probe.data_mut()[i] = orig;
            let numeric = (plus - minus) / denom;
            let a = analytic.data()[i].as_f64();
            let err = self.relative_error(a, numeric);
            if err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = Some((i, a, numeric));
            }
            report.checked += 1;
        }
        report
    }
}

#[derive(Debug, Clone, Default)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    /// `(flat index, analytic, numeric)` of the worst coordinate.
    pub worst: Option<(usize, f64, f64)>,
}

impl GradCheckReport {
    pub fn merge(&mut self, other: GradCheckReport) {
        if other.max_rel_error > self.max_rel_error {
            self.max_rel_error = other.max_rel_error;
            self.worst = other.worst;
        }
        self.checked += other.checked;
    }
}

/// Fixed random projection turning a tensor output into a scalar loss.
pub fn projection<T: Element>(shape: &[usize], rng: &mut impl Rng) -> Tensor<T> {
    Tensor::from_fn(shape.to_vec(), |_| T::from_f64(rng.random_range(-1.0..1.0)))
}

pub fn random_tensor<T: Element>(shape: &[usize], rng: &mut impl Rng) -> Tensor<T> {
    projection(shape, rng)
}

/// `sum(y * proj)` accumulated in f64 so the reduction adds no roundoff of its own.
pub fn project_loss<T: Element>(y: &Tensor<T>, proj: &Tensor<T>) -> f64 {
    assert_eq!(y.shape(), proj.shape(), "projection shape");
    y.data().iter().zip(proj.data()).map(|(a, b)| a.as_f64() * b.as_f64()).sum()
}
