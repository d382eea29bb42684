use crate::element::Element;
use crate::error::{Result, TensorError};
use crate::tensor::Tensor;

/// Row-wise softmax of `[N, K]` logits.
pub fn softmax<T: Element>(logits: &Tensor<T>) -> Result<Tensor<T>> {
    let [_, k] = logits.dims2("softmax")?;
    let mut out = logits.data().to_vec();
    for row in out.chunks_mut(k) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut total = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        for v in row.iter_mut() {
            *v = *v / total;
        }
    }
    Tensor::new(logits.shape().to_vec(), out)
}

/// Mean negative log-likelihood and its gradient `(softmax - onehot) / N`.
pub fn softmax_cross_entropy<T: Element>(logits: &Tensor<T>, labels: &[usize]) -> Result<(T, Tensor<T>)> {
    let [n, k] = logits.dims2("softmax_cross_entropy")?;
    if labels.len() != n {
        return Err(TensorError::Dim {
            op: "softmax_cross_entropy",
            axis: "batch",
            expected: n,
            actual: labels.len(),
        });
    }
    if let Some((index, &label)) = labels.iter().enumerate().find(|(_, &l)| l >= k) {
        return Err(TensorError::Label {
            index,
            label,
            classes: k,
        });
    }
    let inv_n = T::one() / T::from_f64(n as f64);
    let mut grad = logits.data().to_vec();
    let mut loss = T::zero();
    for (row, &label) in grad.chunks_mut(k).zip(labels) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let lse = row.iter().map(|&v| (v - max).exp()).sum::<T>().ln() + max;
        loss += lse - row[label];
        for v in row.iter_mut() {
            *v = (*v - lse).exp() * inv_n;
        }
        row[label] -= inv_n;
    }
    Ok((loss * inv_n, Tensor::new(logits.shape().to_vec(), grad)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_give_log_k() {
        let logits = Tensor::<f64>::zeros(vec![2, 24]);
        let (loss, grad) = softmax_cross_entropy(&logits, &[0, 23]).unwrap();
        assert!((loss - 24f64.ln()).abs() < 1e-12);
        assert!((loss - 3.178).abs() < 1e-3);
        let p = softmax(&logits).unwrap();
        assert!(p.data().iter().all(|&v| (v - 1.0 / 24.0).abs() < 1e-15));
        assert!((grad.data()[0] - (1.0 / 24.0 - 1.0) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn rows_sum_to_one() {
        let logits = Tensor::<f32>::from_fn(vec![3, 5], |i| (i as f32 * 1.7).sin() * 30.0);
        let p = softmax(&logits).unwrap();
        for row in p.data().chunks(5) {
            assert!((row.iter().sum::<f32>() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn label_out_of_range() {
        let logits = Tensor::<f32>::zeros(vec![2, 3]);
        assert!(matches!(
            softmax_cross_entropy(&logits, &[0, 3]),
            Err(TensorError::Label { index: 1, label: 3, classes: 3 })
        ));
    }
}
