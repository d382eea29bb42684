//! Dataset side of the recognizer: frames pulled from recorded streams,
//! folder-labeled manifests with quality scores, augmentation, and batch
//! loading into standardized NCHW tensors.

pub mod augment;
pub mod batch;
pub mod error;
pub mod frames;
pub mod histogram;
pub mod manifest;
pub mod quality;

pub use augment::{augment, augment_planar, AugmentConfig};
pub use batch::{load_batch, load_image, normalize, prepare, resize_bilinear, Planar};
pub use error::{DatasetError, Result};
pub use frames::{extract_frames, read_frame_pipe, write_frame_pipe, FrameStream, PipeFrame};
pub use histogram::{class_histogram, Histogram};
pub use manifest::{build_manifest, DatasetManifest, LabeledSample, ManifestOptions, Split, ValidationSource};
pub use quality::{filter_invalid, quality_score};
