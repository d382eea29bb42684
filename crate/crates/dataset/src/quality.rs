use image::RgbImage;

use crate::manifest::LabeledSample;

/// Variance of the 4-neighbour Laplacian over the grayscale interior; 0 for images under 3x3.
pub fn quality_score(img: &RgbImage) -> f64 {
    let (w, h) = (img.width() as usize, img.height() as usize);
    if w < 3 || h < 3 {
        return 0.0;
    }
    let gray: Vec<f64> = img
        .pixels()
        .map(|p| 0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64)
        .collect();
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let c = gray[y * w + x];
            let l = gray[y * w + x - 1] + gray[y * w + x + 1] + gray[(y - 1) * w + x] + gray[(y + 1) * w + x] - 4.0 * c;
            sum += l;
            sum_sq += l * l;
        }
    }
    let n = ((w - 2) * (h - 2)) as f64;
    let mean = sum / n;
    (sum_sq / n - mean * mean).max(0.0)
}

/// Splits samples into `(score >= threshold, score < threshold)`, preserving order.
pub fn filter_invalid(samples: Vec<LabeledSample>, threshold: f64) -> (Vec<LabeledSample>, Vec<LabeledSample>) {
    samples.into_iter().partition(|s| s.quality >= threshold)
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::Rgb;

    fn checkerboard(n: u32) -> RgbImage {
        RgbImage::from_fn(n, n, |x, y| if (x + y) % 2 == 0 { Rgb([255; 3]) } else { Rgb([0; 3]) })
    }

    fn box_blur2(img: &RgbImage) -> RgbImage {
        RgbImage::from_fn(img.width(), img.height(), |x, y| {
            let mut acc = [0u32; 3];
            for (dx, dy) in [(0, 0), (1, 0), (0, 1), (1, 1)] {
                let p = img.get_pixel((x + dx).min(img.width() - 1), (y + dy).min(img.height() - 1));
                for c in 0..3 {
                    acc[c] += p[c] as u32;
                }
            }
            Rgb(acc.map(|v| (v / 4) as u8))
        })
    }

    #[test]
    fn constant_image_scores_zero() {
        assert_eq!(quality_score(&RgbImage::from_pixel(8, 8, Rgb([90, 10, 200]))), 0.0);
    }

    #[test]
    fn blur_lowers_score() {
        let sharp = checkerboard(16);
        assert!(quality_score(&sharp) > quality_score(&box_blur2(&sharp)));
    }
}
