use super::image::GrayImage;
use crate::error::{Error, Result};

/// Population variance of the 4-neighbour Laplacian response over the valid
/// (unpadded) region. Low values indicate blur.
pub fn laplacian_variance(img: &GrayImage) -> Result<f64> {
    let (w, h) = (img.width(), img.height());
    if w < 3 || h < 3 {
        return Err(Error::Domain(format!(
            "Laplacian needs at least 3×3 pixels, image is {w}×{h}"
        )));
    }
    let px = img.pixels();
    let at = |x: usize, y: usize| px[y * w + x] as f64;
    let n = ((w - 2) * (h - 2)) as f64;
    let (mut sum, mut sum_sq) = (0.0f64, 0.0f64);
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let r = at(x, y - 1) + at(x - 1, y) + at(x + 1, y) + at(x, y + 1) - 4.0 * at(x, y);
            sum += r;
            sum_sq += r * r;
        }
    }
    let mean = sum / n;
    Ok((sum_sq / n - mean * mean).max(0.0))
}

/// Standard deviation of pixel intensities.
pub fn contrast_score(img: &GrayImage) -> f64 {
    let n = img.pixels().len() as f64;
    let mean = img.mean();
    let var = img
        .pixels()
        .iter()
        .map(|&p| (p as f64 - mean).powi(2))
        .sum::<f64>()
        / n;
    var.sqrt()
}

/// Separable Gaussian blur, kernel radius `ceil(3σ)`, edges replicated.
pub fn gaussian_blur(img: &GrayImage, sigma: f32) -> Result<GrayImage> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::Config(format!("blur sigma {sigma} must be positive")));
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let mut kernel: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * (sigma as f64).powi(2))).exp())
        .collect();
    let total: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|k| *k /= total);

    let (w, h) = (img.width() as isize, img.height() as isize);
    let src = img.pixels();
    let mut tmp = vec![0.0f64; src.len()];
    for y in 0..h {
        for x in 0..w {
            tmp[(y * w + x) as usize] = kernel
                .iter()
                .zip(-radius..)
                .map(|(k, d)| k * src[(y * w + (x + d).clamp(0, w - 1)) as usize] as f64)
                .sum();
        }
    }
    let mut out = vec![0.0f32; src.len()];
    for y in 0..h {
        for x in 0..w {
            let v: f64 = kernel
                .iter()
                .zip(-radius..)
                .map(|(k, d)| k * tmp[((y + d).clamp(0, h - 1) * w + x) as usize])
                .sum();
            out[(y * w + x) as usize] = super::image::clamp01(v as f32);
        }
    }
    GrayImage::new(img.width(), img.height(), out)
}
