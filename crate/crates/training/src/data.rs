use rand::Rng;
use rayon::prelude::*;
use signforge_core::models::{ModelSpec, Normalization};
use signforge_core::Tensor;
use signforge_dataset::{augment_planar, batch, load_image, AugmentConfig, DatasetManifest, Planar, Split};

use crate::error::{Result, TrainError};

/// Decoded, resized images of one split, kept in `[0, 1]` so augmentation
/// zero-fills with black before standardization.
#[derive(Debug, Clone, Default)]
pub struct LoadedSplit {
    pub images: Vec<Planar>,
    pub labels: Vec<usize>,
}

impl LoadedSplit {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Standardized `[N, C, H, W]` batch of `indices` with their labels.
    pub fn batch(&self, indices: &[usize], norm: &Normalization) -> Result<(Tensor<f32>, Vec<usize>)> {
        self.assemble(indices, norm, |p| p.clone())
    }

    /// As [`LoadedSplit::batch`], augmenting each image in index order first.
    pub fn augmented_batch(
        &self,
        indices: &[usize],
        norm: &Normalization,
        cfg: &AugmentConfig,
        rng: &mut impl Rng,
    ) -> Result<(Tensor<f32>, Vec<usize>)> {
        self.assemble(indices, norm, |p| augment_planar(p, cfg, rng))
    }

    fn assemble(
        &self,
        indices: &[usize],
        norm: &Normalization,
        mut prepare: impl FnMut(&Planar) -> Planar,
    ) -> Result<(Tensor<f32>, Vec<usize>)> {
        let mut planars: Vec<Planar> = indices.iter().map(|&i| prepare(&self.images[i])).collect();
        planars.iter_mut().for_each(|p| batch::normalize(p, norm));
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        Ok((batch::stack(&planars)?, labels))
    }
}

#[derive(Debug, Clone)]
pub struct TrainingData {
    pub classes: Vec<String>,
    /// `[height, width]`.
    pub size: [usize; 2],
    pub normalization: Normalization,
    pub train: LoadedSplit,
    pub val: LoadedSplit,
}

impl TrainingData {
    /// Decodes every manifest sample once; both splits must be non-empty.
    pub fn from_manifest(manifest: &DatasetManifest) -> Result<Self> {
        let load = |split: Split| -> Result<LoadedSplit> {
            let idx = manifest.split_indices(split);
            let images = idx
                .par_iter()
                .map(|&i| load_image(&manifest.resolve(&manifest.samples[i]), manifest.image_size))
                .collect::<std::result::Result<Vec<_>, _>>()?;
            Ok(LoadedSplit {
                images,
                labels: manifest.labels(&idx),
            })
        };
        let data = Self {
            classes: manifest.classes.clone(),
            size: manifest.image_size,
            normalization: manifest.normalization.clone(),
            train: load(Split::Train)?,
            val: load(Split::Validation)?,
        };
        if data.train.is_empty() {
            return Err(TrainError::EmptySplit("train"));
        }
        if data.val.is_empty() {
            return Err(TrainError::EmptySplit("validation"));
        }
        Ok(data)
    }

    pub fn input_shape(&self) -> [usize; 3] {
        [3, self.size[0], self.size[1]]
    }

    /// `spec` retargeted to this data's input size, labels and normalization.
    pub fn adapt(&self, spec: ModelSpec) -> ModelSpec {
        let mut spec = spec.with_input(self.input_shape()).with_classes(self.classes.clone());
        spec.normalization = self.normalization.clone();
        spec
    }
}

/// Fisher-Yates order of `0..n` drawn from `rng`.
pub(crate) fn shuffled(n: usize, rng: &mut impl Rng) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut v: Vec<usize> = (0..n).collect();
    v.shuffle(rng);
    v
}
