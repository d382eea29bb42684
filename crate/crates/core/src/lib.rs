//! Numeric core for a fingerspelling recognizer: NCHW tensors, convolution,
//! pooling and normalization kernels with paired gradients, the CNN building
//! blocks composed from them, and a miniature model zoo with a binary weights
//! format.

pub mod blocks;
pub mod element;
pub mod error;
pub mod gradcheck;
pub mod layers;
pub mod models;
pub mod ops;
pub mod reference;
pub mod tensor;
pub mod verify;

pub use element::Element;
pub use error::{Result, TensorError};
pub use tensor::Tensor;
