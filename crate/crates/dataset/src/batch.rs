use std::path::Path;

use image::RgbImage;
use rayon::prelude::*;
use signforge_core::models::Normalization;
use signforge_core::Tensor;

use crate::error::{DatasetError, Result};
use crate::manifest::DatasetManifest;

/// Channel-planar float image, `data[c][y][x]`, values nominally in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Planar {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl Planar {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    pub fn from_rgb(img: &RgbImage) -> Self {
        let (w, h) = (img.width() as usize, img.height() as usize);
        let mut p = Self::zeros(3, h, w);
        for (i, px) in img.pixels().enumerate() {
            for c in 0..3 {
                p.data[c * h * w + i] = px[c] as f32 / 255.0;
            }
        }
        p
    }

    pub fn to_rgb(&self) -> RgbImage {
        assert_eq!(self.channels, 3, "to_rgb needs three channels");
        let plane = self.height * self.width;
        RgbImage::from_fn(self.width as u32, self.height as u32, |x, y| {
            let i = y as usize * self.width + x as usize;
            image::Rgb(std::array::from_fn(|c| (self.data[c * plane + i].clamp(0.0, 1.0) * 255.0).round() as u8))
        })
    }

    #[inline]
    pub fn at(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }
}

/// Bilinear resize with half-pixel centers and edge clamping.
pub fn resize_bilinear(src: &Planar, height: usize, width: usize) -> Planar {
    if (src.height, src.width) == (height, width) {
        return src.clone();
    }
    let axis = |out: usize, inp: usize| -> Vec<(usize, usize, f32)> {
        let scale = inp as f64 / out as f64;
        (0..out)
            .map(|o| {
                let s = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (inp - 1) as f64);
                let i0 = s.floor() as usize;
                let i1 = (i0 + 1).min(inp - 1);
                (i0, i1, (s - i0 as f64) as f32)
            })
            .collect()
    };
    let ys = axis(height, src.height);
    let xs = axis(width, src.width);
    let mut out = Planar::zeros(src.channels, height, width);
    for c in 0..src.channels {
        for (oy, &(y0, y1, fy)) in ys.iter().enumerate() {
            for (ox, &(x0, x1, fx)) in xs.iter().enumerate() {
                let top = src.at(c, y0, x0) * (1.0 - fx) + src.at(c, y0, x1) * fx;
                let bot = src.at(c, y1, x0) * (1.0 - fx) + src.at(c, y1, x1) * fx;
                out.data[(c * height + oy) * width + ox] = top * (1.0 - fy) + bot * fy;
            }
        }
    }
    out
}

pub fn normalize(img: &mut Planar, norm: &Normalization) {
    let plane = img.height * img.width;
    for (c, chunk) in img.data.chunks_mut(plane).enumerate() {
        let (m, s) = (norm.mean[c], norm.std[c]);
        chunk.iter_mut().for_each(|v| *v = (*v - m) / s);
    }
}

/// Decodes an image file and resizes it to `[height, width]`, values in `[0, 1]`.
pub fn load_image(path: &Path, size: [usize; 2]) -> Result<Planar> {
    let img = image::open(path)
        .map_err(|source| DatasetError::Image {
            path: path.to_owned(),
            source,
        })?
        .to_rgb8();
    Ok(resize_bilinear(&Planar::from_rgb(&img), size[0], size[1]))
}

/// Decoded frame to standardized model input: resize to `[height, width]`, then `norm`.
/// Matches [`load_image`] followed by [`normalize`] bit for bit.
pub fn prepare(img: &RgbImage, size: [usize; 2], norm: &Normalization) -> Planar {
    let mut p = resize_bilinear(&Planar::from_rgb(img), size[0], size[1]);
    normalize(&mut p, norm);
    p
}

/// Stacks `planars` into `[N, C, H, W]`.
pub fn stack(planars: &[Planar]) -> Result<Tensor<f32>> {
    let first = planars
        .first()
        .ok_or_else(|| DatasetError::Config("cannot stack an empty batch".into()))?;
    let mut data = Vec::with_capacity(planars.len() * first.data.len());
    for p in planars {
        if (p.channels, p.height, p.width) != (first.channels, first.height, first.width) {
            return Err(DatasetError::Config("batch images differ in shape".into()));
        }
        data.extend_from_slice(&p.data);
    }
    Ok(Tensor::new(vec![planars.len(), first.channels, first.height, first.width], data)?)
}

/// Loads `indices` from the manifest in order, optionally standardizing with `norm`.
pub fn load_batch(
    manifest: &DatasetManifest,
    indices: &[usize],
    size: [usize; 2],
    norm: Option<&Normalization>,
) -> Result<Tensor<f32>> {
    if let Some(&bad) = indices.iter().find(|&&i| i >= manifest.samples.len()) {
        return Err(DatasetError::Config(format!(
            "sample index {bad} out of range for {} samples",
            manifest.samples.len()
        )));
    }
    let planars = indices
        .par_iter()
        .map(|&i| {
            let mut p = load_image(&manifest.resolve(&manifest.samples[i]), size)?;
            if let Some(n) = norm {
                normalize(&mut p, n);
            }
            Ok(p)
        })
        .collect::<Result<Vec<_>>>()?;
    stack(&planars)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn resize_two_to_four_matches_closed_form() {
        let src = Planar {
            channels: 1,
            height: 2,
            width: 2,
            data: vec![0.0, 1.0, 2.0, 3.0],
        };
        let out = resize_bilinear(&src, 4, 4);
        // half-pixel centers: source coordinate (o + 0.5) / 2 - 0.5 clamped to [0, 1]
        let w = [0.0f32, 0.25, 0.75, 1.0];
        for (oy, &fy) in w.iter().enumerate() {
            for (ox, &fx) in w.iter().enumerate() {
                let want = (1.0 - fy) * ((1.0 - fx) * 0.0 + fx * 1.0) + fy * ((1.0 - fx) * 2.0 + fx * 3.0);
                assert!((out.at(0, oy, ox) - want).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn rgb_round_trip() {
        let img = RgbImage::from_fn(3, 2, |x, y| image::Rgb([x as u8 * 40, y as u8 * 90, 7]));
        assert_eq!(Planar::from_rgb(&img).to_rgb(), img);
    }
}
