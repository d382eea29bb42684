//! Folder-labeled dataset manifests.
//!
//! Each class lives in a folder named after its letter. Sample paths are stored
//! relative to the manifest's directory when possible.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use signforge_core::models::{asl_letters, Normalization};

use crate::error::{io_err, DatasetError, Result};
use crate::quality::quality_score;

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Validation,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Self::Train => "train",
            Self::Validation => "validation",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabeledSample {
    pub path: PathBuf,
    pub label: String,
    pub split: Split,
    pub quality: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub version: u32,
    pub classes: Vec<String>,
    /// `[height, width]` that samples are resized to when loaded.
    pub image_size: [usize; 2],
    pub normalization: Normalization,
    pub samples: Vec<LabeledSample>,
    /// Directory relative sample paths resolve against; set on load and build.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl DatasetManifest {
    pub fn new(classes: Vec<String>, image_size: [usize; 2], samples: Vec<LabeledSample>, base_dir: PathBuf) -> Result<Self> {
        let m = Self {
            version: MANIFEST_VERSION,
            classes,
            image_size,
            normalization: Normalization::default(),
            samples,
            base_dir,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != MANIFEST_VERSION {
            return Err(DatasetError::Manifest(format!("unsupported version {}", self.version)));
        }
        if self.classes.len() < 2 {
            return Err(DatasetError::Manifest("need at least two classes".into()));
        }
        if self.image_size.contains(&0) {
            return Err(DatasetError::Manifest("image size has a zero dimension".into()));
        }
        self.normalization
            .validate(3)
            .map_err(|e| DatasetError::Manifest(e.to_string()))?;
        if let Some(s) = self.samples.iter().find(|s| self.class_index(&s.label).is_none()) {
            return Err(DatasetError::Manifest(format!("{}: label {:?} not in classes", s.path.display(), s.label)));
        }
        if let Some(s) = self.samples.iter().find(|s| !(s.quality >= 0.0)) {
            return Err(DatasetError::Manifest(format!("{}: negative quality", s.path.display())));
        }
        Ok(())
    }

    pub fn class_index(&self, label: &str) -> Option<usize> {
        self.classes.iter().position(|c| c == label)
    }

    /// Per-class sample counts in class order.
    pub fn counts(&self) -> Vec<(String, usize)> {
        let mut counts: BTreeMap<&str, usize> = self.classes.iter().map(|c| (c.as_str(), 0)).collect();
        for s in &self.samples {
            *counts.get_mut(s.label.as_str()).expect("validated label") += 1;
        }
        self.classes.iter().map(|c| (c.clone(), counts[c.as_str()])).collect()
    }

    pub fn split_indices(&self, split: Split) -> Vec<usize> {
        self.samples
            .iter()
            .enumerate()
            .filter(|(_, s)| s.split == split)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn labels(&self, indices: &[usize]) -> Vec<usize> {
        indices
            .iter()
            .map(|&i| self.class_index(&self.samples[i].label).expect("validated label"))
            .collect()
    }

    pub fn resolve(&self, sample: &LabeledSample) -> PathBuf {
        if sample.path.is_absolute() {
            sample.path.clone()
        } else {
            self.base_dir.join(&sample.path)
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        let mut m: Self = serde_json::from_str(&text).map_err(|source| DatasetError::Json {
            path: path.to_owned(),
            source,
        })?;
        m.base_dir = path.parent().map(Path::to_owned).unwrap_or_default();
        m.validate()?;
        Ok(m)
    }

    /// Writes JSON; relative sample paths are rebased onto the destination directory.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let dest_dir = path.parent().map(Path::to_owned).unwrap_or_default();
        let mut out = self.clone();
        let same_dir = absolute(&dest_dir) == absolute(&self.base_dir);
        if !same_dir {
            for s in &mut out.samples {
                let abs = absolute(&self.resolve(s));
                s.path = abs.strip_prefix(absolute(&dest_dir)).map(Path::to_owned).unwrap_or(abs);
            }
        }
        let text = serde_json::to_string_pretty(&out).expect("manifest serializes");
        fs::write(path, text + "\n").map_err(io_err(path))
    }
}

fn absolute(p: &Path) -> PathBuf {
    if p.as_os_str().is_empty() {
        std::env::current_dir().unwrap_or_default()
    } else {
        std::path::absolute(p).unwrap_or_else(|_| p.to_owned())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ValidationSource {
    /// Per-class fraction of the root's images, chosen by a seeded shuffle.
    Fraction(f64),
    /// A separate directory with the same letter folders.
    Dir(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestOptions {
    pub image_size: [usize; 2],
    pub validation: ValidationSource,
    pub seed: u64,
}

fn is_image(p: &Path) -> bool {
    matches!(
        p.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref(),
        Some("png" | "jpg" | "jpeg" | "bmp")
    )
}

/// Letter folder -> sorted image paths (relative to `root`).
fn scan(root: &Path) -> Result<BTreeMap<String, Vec<PathBuf>>> {
    let letters = asl_letters();
    let mut found = BTreeMap::new();
    let mut unknown = Vec::new();
    for entry in fs::read_dir(root).map_err(io_err(root))? {
        let entry = entry.map_err(io_err(root))?;
        let path = entry.path();
        if !path.is_dir() {
            continue;
        }
        let name = entry.file_name().to_string_lossy().into_owned();
        if !letters.contains(&name) {
            unknown.push(name);
            continue;
        }
        let mut files = Vec::new();
        for f in fs::read_dir(&path).map_err(io_err(&path))? {
            let f = f.map_err(io_err(&path))?.path();
            if f.is_file() && is_image(&f) {
                files.push(PathBuf::from(&name).join(f.file_name().expect("file has a name")));
            }
        }
        files.sort();
        found.insert(name, files);
    }
    if !unknown.is_empty() {
        unknown.sort();
        return Err(DatasetError::UnknownFolders(unknown));
    }
    Ok(found)
}

fn score(path: &Path) -> Result<f64> {
    let img = image::open(path)
        .map_err(|source| DatasetError::Image {
            path: path.to_owned(),
            source,
        })?
        .to_rgb8();
    Ok(quality_score(&img))
}

/// Builds a manifest from letter folders under `root`.
///
/// The class list is every letter folder present, in alphabet order. Quality
/// scores are computed from the decoded images.
pub fn build_manifest(root: impl AsRef<Path>, opts: &ManifestOptions) -> Result<DatasetManifest> {
    let root = root.as_ref();
    let train = scan(root)?;
    if train.is_empty() {
        return Err(DatasetError::Manifest(format!("{} has no letter folders", root.display())));
    }
    if let Some((c, _)) = train.iter().find(|(_, v)| v.is_empty()) {
        return Err(DatasetError::EmptyClass(c.clone()));
    }
    let mut planned: Vec<(PathBuf, String, Split)> = Vec::new();
    match &opts.validation {
        ValidationSource::Fraction(f) => {
            if !(0.0..1.0).contains(f) {
                return Err(DatasetError::Config(format!("validation fraction {f} outside [0, 1)")));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
            for (label, files) in &train {
                let mut order = files.clone();
                order.shuffle(&mut rng);
                let n_val = (files.len() as f64 * f).round() as usize;
                let n_val = n_val.min(files.len().saturating_sub(1));
                for (i, p) in order.into_iter().enumerate() {
                    let split = if i < n_val { Split::Validation } else { Split::Train };
                    planned.push((root.join(p), label.clone(), split));
                }
            }
        }
        ValidationSource::Dir(dir) => {
            let val = scan(dir)?;
            if let Some(extra) = val.keys().find(|k| !train.contains_key(*k)) {
                return Err(DatasetError::Manifest(format!("validation class {extra} has no training folder")));
            }
            for (label, files) in &train {
                planned.extend(files.iter().map(|p| (root.join(p), label.clone(), Split::Train)));
            }
            for (label, files) in &val {
                planned.extend(files.iter().map(|p| (dir.join(p), label.clone(), Split::Validation)));
            }
        }
    }
    planned.sort_by(|a, b| (a.2, &a.1, &a.0).cmp(&(b.2, &b.1, &b.0)));
    let scores: Vec<f64> = planned.par_iter().map(|(p, _, _)| score(p)).collect::<Result<_>>()?;
    let base = root.to_owned();
    let samples = planned
        .into_iter()
        .zip(scores)
        .map(|((path, label, split), quality)| LabeledSample {
            path: path.strip_prefix(&base).map(Path::to_owned).unwrap_or(path),
            label,
            split,
            quality,
        })
        .collect();
    DatasetManifest::new(train.into_keys().collect(), opts.image_size, samples, base)
}
