use crate::element::Element;
use crate::error::{Result, TensorError};
use crate::tensor::Tensor;

pub fn relu<T: Element>(input: &Tensor<T>) -> Tensor<T> {
    input.map(|v| v.max(T::zero()))
}

/// Gradient of `relu` given the forward input; zero at the kink.
pub fn relu_grad<T: Element>(input: &Tensor<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    if input.shape() != grad_out.shape() {
        return Err(TensorError::Invalid(format!(
            "relu_grad: gradient shape {:?} does not match input {:?}",
            grad_out.shape(),
            input.shape()
        )));
    }
    input.zip_map(grad_out, "relu_grad", |x, g| if x > T::zero() { g } else { T::zero() })
}
