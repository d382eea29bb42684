use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use image::{Rgb, RgbImage};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use signforge_dataset::{quality_score, DatasetManifest, LabeledSample, Split};

use crate::error::{io_err, Result, TrainError};

pub const SHAPE_CLASSES: [&str; 3] = ["circle", "square", "triangle"];

/// Writes `n_per_class` images per shape under `out_dir/<class>/` plus
/// `out_dir/manifest.json`. Every fifth sample of a class is validation.
pub fn synth_shapes(n_per_class: usize, size: usize, seed: u64, out_dir: impl AsRef<Path>) -> Result<DatasetManifest> {
    if size < 16 {
        return Err(TrainError::Config(format!("synthetic image size must be at least 16, got {size}")));
    }
    if n_per_class == 0 {
        return Err(TrainError::Config("need at least one image per class".into()));
    }
    let out = out_dir.as_ref();
    let mut samples = Vec::with_capacity(n_per_class * SHAPE_CLASSES.len());
    for (c, class) in SHAPE_CLASSES.iter().enumerate() {
        let dir = out.join(class);
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        for i in 0..n_per_class {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream((c * n_per_class + i) as u64);
            let img = render(c, size, &mut rng);
            let rel = Path::new(class).join(format!("{class}_{i:05}.png"));
            let path = out.join(&rel);
            img.save(&path).map_err(|e| TrainError::Io {
                path: path.clone(),
                source: std::io::Error::other(e),
            })?;
            samples.push(LabeledSample {
                path: rel,
                label: class.to_string(),
                split: if i % 5 == 4 { Split::Validation } else { Split::Train },
                quality: quality_score(&img),
            });
        }
    }
    let classes = SHAPE_CLASSES.iter().map(|s| s.to_string()).collect();
    let manifest = DatasetManifest::new(classes, [size, size], samples, out.to_path_buf())?;
    manifest.save(out.join("manifest.json"))?;
    Ok(manifest)
}

fn render(class: usize, size: usize, rng: &mut impl Rng) -> RgbImage {
    let s = size as f64;
    let bg: [f64; 3] = [rng.random_range(0.0..0.2); 3];
    let fg: [f64; 3] = [rng.random_range(0.8..1.0); 3];
    let r = rng.random_range(0.28..0.4) * s;
    let cx = rng.random_range(r..s - r);
    let cy = rng.random_range(r..s - r);
    let angle = if class == 1 { PI / 4.0 } else { -PI / 2.0 } + rng.random_range(-0.15..0.15);
    let corners = match class {
        1 => 4,
        2 => 3,
        _ => 0,
    };
    let poly: Vec<(f64, f64)> = (0..corners)
        .map(|k| {
            let a = angle + 2.0 * PI * k as f64 / corners as f64;
            (cx + r * a.cos(), cy + r * a.sin())
        })
        .collect();
    RgbImage::from_fn(size as u32, size as u32, |x, y| {
        let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
        let inside = if corners == 0 {
            (px - cx).powi(2) + (py - cy).powi(2) <= (r * 0.8).powi(2)
        } else {
            in_convex(&poly, px, py)
        };
        let base = if inside { fg } else { bg };
        Rgb(std::array::from_fn(|ch| {
            let v = base[ch] + rng.random_range(-0.05..0.05);
            (v.clamp(0.0, 1.0) * 255.0).round() as u8
        }))
    })
}

/// Counter-clockwise or clockwise convex polygon containment.
fn in_convex(poly: &[(f64, f64)], x: f64, y: f64) -> bool {
    let mut sign = 0.0;
    for (k, &(ax, ay)) in poly.iter().enumerate() {
        let (bx, by) = poly[(k + 1) % poly.len()];
        let cross = (bx - ax) * (y - ay) - (by - ay) * (x - ax);
        if cross != 0.0 {
            if sign == 0.0 {
                sign = cross.signum();
            } else if cross.signum() != sign {
                return false;
            }
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_contains_center_not_corner_outside() {
        let sq = [(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)];
        assert!(in_convex(&sq, 0.5, 0.5));
        assert!(!in_convex(&sq, 1.5, 0.5));
    }

    #[test]
    fn rejects_small_size() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(synth_shapes(2, 8, 0, dir.path()), Err(TrainError::Config(_))));
    }
}
