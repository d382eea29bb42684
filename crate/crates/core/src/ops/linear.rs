use crate::element::Element;
use crate::error::{Result, TensorError};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct LinearGrads<T = f32> {
    pub input: Tensor<T>,
    pub weights: Tensor<T>,
    pub bias: Option<Tensor<T>>,
}

fn check<T: Element>(op: &'static str, input: &Tensor<T>, weights: &Tensor<T>, bias: Option<&Tensor<T>>) -> Result<[usize; 3]> {
    let [n, d] = input.dims2(op)?;
    let [wd, k] = weights.dims2(op)?;
    if wd != d {
        return Err(TensorError::Dim {
            op,
            axis: "feature",
            expected: wd,
            actual: d,
        });
    }
    if let Some(b) = bias {
        if b.len() != k {
            return Err(TensorError::Dim {
                op,
                axis: "bias",
                expected: k,
                actual: b.len(),
            });
        }
    }
    Ok([n, d, k])
}

/// `input [N, D] x weights [D, K] + bias [K]`.
pub fn linear<T: Element>(input: &Tensor<T>, weights: &Tensor<T>, bias: Option<&Tensor<T>>) -> Result<Tensor<T>> {
    let [n, d, k] = check("linear", input, weights, bias)?;
    let mut out = match bias {
        Some(b) => b.data().repeat(n),
        None => vec![T::zero(); n * k],
    };
    T::gemm(n, d, k, T::one(), input.data(), false, weights.data(), false, T::one(), &mut out);
    let out = Tensor::from_parts_unchecked(vec![n, k], out);
    Ok(out)
}

pub fn linear_grad<T: Element>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    has_bias: bool,
    grad_out: &Tensor<T>,
) -> Result<LinearGrads<T>> {
    let [n, d, k] = check("linear_grad", input, weights, None)?;
    let [gn, gk] = grad_out.dims2("linear_grad")?;
    if (gn, gk) != (n, k) {
        return Err(TensorError::Dim {
            op: "linear_grad",
            axis: if gn != n { "batch" } else { "class" },
            expected: if gn != n { n } else { k },
            actual: if gn != n { gn } else { gk },
        });
    }
    let go = grad_out.data();
    let mut gx = vec![T::zero(); n * d];
    T::gemm(n, k, d, T::one(), go, false, weights.data(), true, T::zero(), &mut gx);
    let mut gw = vec![T::zero(); d * k];
    T::gemm(d, n, k, T::one(), input.data(), true, go, false, T::zero(), &mut gw);
    let bias = has_bias.then(|| {
        let mut gb = vec![T::zero(); k];
        for row in go.chunks(k) {
            for (a, &b) in gb.iter_mut().zip(row) {
                *a += b;
            }
        }
        Tensor::from_parts_unchecked(vec![k], gb)
    });
    Ok(LinearGrads {
        input: Tensor::from_parts_unchecked(vec![n, d], gx),
        weights: Tensor::from_parts_unchecked(vec![d, k], gw),
        bias,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn affine_map() {
        let x = Tensor::<f64>::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let w = Tensor::new(vec![2, 3], vec![1.0, 0.0, -1.0, 0.5, 1.0, 2.0]).unwrap();
        let b = Tensor::new(vec![3], vec![0.1, 0.2, 0.3]).unwrap();
        let y = linear(&x, &w, Some(&b)).unwrap();
        assert_eq!(y.data(), &[2.1, 2.2, 3.3, 5.1, 4.2, 5.3]);
        let bad = Tensor::<f64>::zeros(vec![3, 3]);
        assert!(matches!(linear(&x, &bad, None), Err(TensorError::Dim { axis: "feature", .. })));
    }
}
