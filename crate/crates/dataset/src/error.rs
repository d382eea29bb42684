use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: cannot decode image: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
    #[error("{path}: invalid manifest: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("frame stream {0:?} is empty")]
    EmptyStream(String),
    #[error("frame stride must be at least 1")]
    ZeroStride,
    #[error("frame {index}: {reason}")]
    Frame { index: usize, reason: String },
    #[error("unknown class folders (expected static letters A-Y without J): {}", .0.join(", "))]
    UnknownFolders(Vec<String>),
    #[error("class {0} has no images")]
    EmptyClass(String),
    #[error("{0} split is empty")]
    EmptySplit(&'static str),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid manifest: {0}")]
    Manifest(String),
    #[error(transparent)]
    Tensor(#[from] signforge_core::TensorError),
}

pub type Result<T, E = DatasetError> = std::result::Result<T, E>;

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> DatasetError {
    let path = path.into();
    move |source| DatasetError::Io { path, source }
}
