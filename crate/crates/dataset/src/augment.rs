//! Geometric augmentation: rotation, scale and translation about the image
//! center with bilinear resampling and zero fill, then an optional mirror.

use image::RgbImage;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::batch::Planar;
use crate::error::{DatasetError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    /// Rotation angle drawn from `U[-max, max]` degrees.
    pub rotation_deg: f64,
    pub scale: [f64; 2],
    /// Shift drawn from `U[-f, f]` of the image extent, per axis.
    pub translate: f64,
    pub flip_prob: f64,
    pub seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            rotation_deg: 12.0,
            scale: [0.9, 1.1],
            translate: 0.1,
            flip_prob: 0.5,
            seed: 0,
        }
    }
}

impl AugmentConfig {
    pub fn identity() -> Self {
        Self {
            rotation_deg: 0.0,
            scale: [1.0, 1.0],
            translate: 0.0,
            flip_prob: 0.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(DatasetError::Config(m));
        if !(self.rotation_deg >= 0.0 && self.rotation_deg.is_finite()) {
            return bad(format!("rotation {} must be >= 0", self.rotation_deg));
        }
        let [lo, hi] = self.scale;
        if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
            return bad(format!("scale range {:?} must be positive and ordered", self.scale));
        }
        if !(0.0..1.0).contains(&self.translate) {
            return bad(format!("translation {} outside [0, 1)", self.translate));
        }
        if !(0.0..=1.0).contains(&self.flip_prob) {
            return bad(format!("flip probability {} outside [0, 1]", self.flip_prob));
        }
        Ok(())
    }
}

fn symmetric(rng: &mut impl Rng, max: f64) -> f64 {
    if max > 0.0 {
        rng.random_range(-max..=max)
    } else {
        0.0
    }
}

/// Samples from `(1 - fy)(1 - fx) p00 + ...`, treating pixels outside the image as 0.
fn sample(img: &Planar, c: usize, sy: f64, sx: f64) -> f32 {
    let (y0, x0) = (sy.floor(), sx.floor());
    let (fy, fx) = ((sy - y0) as f32, (sx - x0) as f32);
    let px = |y: f64, x: f64| -> f32 {
        if y < 0.0 || x < 0.0 || y >= img.height as f64 || x >= img.width as f64 {
            0.0
        } else {
            img.at(c, y as usize, x as usize)
        }
    };
    let top = px(y0, x0) * (1.0 - fx) + if fx > 0.0 { px(y0, x0 + 1.0) * fx } else { 0.0 };
    let bot = if fy > 0.0 {
        px(y0 + 1.0, x0) * (1.0 - fx) + if fx > 0.0 { px(y0 + 1.0, x0 + 1.0) * fx } else { 0.0 }
    } else {
        0.0
    };
    top * (1.0 - fy) + bot * fy
}

pub fn augment_planar(img: &Planar, cfg: &AugmentConfig, rng: &mut impl Rng) -> Planar {
    let theta = symmetric(rng, cfg.rotation_deg).to_radians();
    let [lo, hi] = cfg.scale;
    let scale = if hi > lo { rng.random_range(lo..=hi) } else { lo };
    let tx = symmetric(rng, cfg.translate) * img.width as f64;
    let ty = symmetric(rng, cfg.translate) * img.height as f64;
    let flip = cfg.flip_prob > 0.0 && rng.random_bool(cfg.flip_prob);

    let (cy, cx) = ((img.height as f64 - 1.0) / 2.0, (img.width as f64 - 1.0) / 2.0);
    let (sin, cos) = theta.sin_cos();
    let mut out = Planar::zeros(img.channels, img.height, img.width);
    for y in 0..img.height {
        for x in 0..img.width {
            // inverse map: undo translation, rotation, then scale
            let dx = x as f64 - cx - tx;
            let dy = y as f64 - cy - ty;
            let sx = (cos * dx + sin * dy) / scale + cx;
            let sy = (-sin * dx + cos * dy) / scale + cy;
            let ox = if flip { img.width - 1 - x } else { x };
            for c in 0..img.channels {
                out.data[(c * img.height + y) * img.width + ox] = sample(img, c, sy, sx);
            }
        }
    }
    out
}

/// Augments an 8-bit image; the label passes through untouched.
pub fn augment<L>(img: &RgbImage, label: L, cfg: &AugmentConfig, rng: &mut impl Rng) -> (RgbImage, L) {
    (augment_planar(&Planar::from_rgb(img), cfg, rng).to_rgb(), label)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn img() -> RgbImage {
        RgbImage::from_fn(9, 7, |x, y| image::Rgb([x as u8 * 20, y as u8 * 30, (x * y) as u8]))
    }

    #[test]
    fn identity_config_is_pixel_exact() {
        let (out, l) = augment(&img(), 'B', &AugmentConfig::identity(), &mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(out, img());
        assert_eq!(l, 'B');
    }

    #[test]
    fn double_flip_is_identity() {
        let cfg = AugmentConfig {
            flip_prob: 1.0,
            ..AugmentConfig::identity()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (once, _) = augment(&img(), 0, &cfg, &mut rng);
        assert_ne!(once, img());
        let (twice, _) = augment(&once, 0, &cfg, &mut rng);
        assert_eq!(twice, img());
    }

    #[test]
    fn seeded_runs_match() {
        let cfg = AugmentConfig::default();
        let a = augment(&img(), 0, &cfg, &mut ChaCha8Rng::seed_from_u64(5)).0;
        let b = augment(&img(), 0, &cfg, &mut ChaCha8Rng::seed_from_u64(5)).0;
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_bad_config() {
        let mut c = AugmentConfig::default();
        c.flip_prob = 1.5;
        assert!(c.validate().is_err());
        c = AugmentConfig::default();
        c.scale = [1.1, 0.9];
        assert!(c.validate().is_err());
        assert!(AugmentConfig::default().validate().is_ok());
    }
}
