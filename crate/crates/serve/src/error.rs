use std::path::PathBuf;

use signforge_core::models::ModelError;
use thiserror::Error;

use crate::wire::WireError;

#[derive(Debug, Error)]
pub enum ServeError {
    #[error("invalid session config: {0}")]
    Config(String),
    #[error("bad frame: {0}")]
    Wire(#[from] WireError),
    #[error("bad command: {0}")]
    Command(String),
    #[error("cannot load model {path}: {source}")]
    LoadModel {
        path: PathBuf,
        #[source]
        source: ModelError,
    },
    #[error("model input must have 3 channels, got {0}")]
    Channels(usize),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] signforge_core::TensorError),
    #[error("cannot bind {addr}: {source}")]
    Bind {
        addr: String,
        #[source]
        source: std::io::Error,
    },
    #[error("server failed: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = ServeError> = std::result::Result<T, E>;
