use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("shape {shape:?} holds {expected} elements but {actual} were supplied")]
    DataLength {
        shape: Vec<usize>,
        expected: usize,
        actual: usize,
    },
    #[error("shape {0:?} has a zero-sized dimension")]
    ZeroDim(Vec<usize>),
    #[error("{op}: expected rank {expected}, got shape {shape:?}")]
    Rank {
        op: &'static str,
        expected: usize,
        shape: Vec<usize>,
    },
    #[error("{op}: dimension mismatch on {axis} axis: expected {expected}, got {actual}")]
    Dim {
        op: &'static str,
        axis: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("{op}: window {window} exceeds input extent {extent} on {axis} axis")]
    Window {
        op: &'static str,
        axis: &'static str,
        window: usize,
        extent: usize,
    },
    #[error("{op}: `same` padding needs an odd kernel, got {kernel} on {axis} axis")]
    EvenKernel {
        op: &'static str,
        axis: &'static str,
        kernel: usize,
    },
    #[error("label {label} out of range for {classes} classes (sample {index})")]
    Label {
        index: usize,
        label: usize,
        classes: usize,
    },
    #[error("{0}")]
    Invalid(String),
}

pub type Result<T, E = TensorError> = std::result::Result<T, E>;
