use std::path::Path;

use image::{GrayImage as Luma8, ImageError};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Single-channel image with intensities in `[0, 1]`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    pixels: Vec<f32>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Domain(format!("empty image {width}×{height}")));
        }
        if pixels.len() != width * height {
            return Err(Error::Dimension(format!(
                "{} pixels for a {width}×{height} image",
                pixels.len()
            )));
        }
        if let Some(p) = pixels.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::Domain(format!("pixel value {p} outside [0, 1]")));
        }
        Ok(GrayImage { width, height, pixels })
    }

    pub fn filled(width: usize, height: usize, value: f32) -> Result<Self> {
        Self::new(width, height, vec![value; width * height])
    }

    /// Builds an image from `f(x, y)`, clamping into `[0, 1]`.
    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> f32) -> Self {
        let mut pixels = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                pixels.push(clamp01(f(x, y)));
            }
        }
        GrayImage { width, height, pixels }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.pixels[y * self.width + x]
    }

    pub fn mean(&self) -> f64 {
        self.pixels.iter().map(|&p| p as f64).sum::<f64>() / self.pixels.len() as f64
    }

    /// Decodes a PNG or PGM (8 or 16 bit); colour input is converted to luma.
    pub fn load(path: &Path) -> Result<Self> {
        let img = image::open(path).map_err(|e| match e {
            ImageError::IoError(io) => Error::io(path, io),
            other => Error::Image {
                path: path.to_path_buf(),
                message: other.to_string(),
            },
        })?;
        let luma = img.to_luma32f();
        let (w, h) = (luma.width() as usize, luma.height() as usize);
        let pixels = luma.into_raw().into_iter().map(clamp01).collect();
        Self::new(w, h, pixels).map_err(|e| Error::Image {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    /// Writes an 8-bit grayscale PNG.
    pub fn save_png(&self, path: &Path) -> Result<()> {
        let bytes = self.pixels.iter().map(|&p| to_u8(p)).collect();
        let img = Luma8::from_raw(self.width as u32, self.height as u32, bytes)
            .expect("buffer matches dimensions");
        img.save_with_format(path, image::ImageFormat::Png)
            .map_err(|e| match e {
                ImageError::IoError(io) => Error::io(path, io),
                other => Error::Image {
                    path: path.to_path_buf(),
                    message: other.to_string(),
                },
            })
    }

    /// Bilinear sample at continuous pixel coordinates, edges clamped.
    pub fn sample_bilinear(&self, x: f32, y: f32) -> f32 {
        bilinear(&self.pixels, self.width, self.height, x, y)
    }

    /// Bilinear resize with half-pixel centres. Same-size is an exact copy.
    pub fn resize(&self, width: usize, height: usize) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Config(format!("resize target {width}×{height}")));
        }
        if (width, height) == (self.width, self.height) {
            return Ok(self.clone());
        }
        let pixels = resize_bilinear(&self.pixels, self.width, self.height, width, height);
        Ok(GrayImage {
            width,
            height,
            pixels: pixels.into_iter().map(clamp01).collect(),
        })
    }

    /// Keeps the central `fraction` of each extent (at least one pixel).
    pub fn center_crop(&self, fraction: f32) -> Result<Self> {
        if !(fraction > 0.0 && fraction <= 1.0) {
            return Err(Error::Config(format!(
                "crop fraction {fraction} outside (0, 1]"
            )));
        }
        let cw = ((self.width as f32 * fraction).round() as usize).clamp(1, self.width);
        let ch = ((self.height as f32 * fraction).round() as usize).clamp(1, self.height);
        let (x0, y0) = ((self.width - cw) / 2, (self.height - ch) / 2);
        let mut pixels = Vec::with_capacity(cw * ch);
        for y in y0..y0 + ch {
            pixels.extend_from_slice(&self.pixels[y * self.width + x0..y * self.width + x0 + cw]);
        }
        Ok(GrayImage { width: cw, height: ch, pixels })
    }

    /// `1×H×W` tensor.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::new([1, self.height, self.width], self.pixels.clone())
            .expect("image is non-empty")
    }
}

pub(crate) fn clamp01(v: f32) -> f32 {
    if v.is_nan() {
        0.0
    } else {
        v.clamp(0.0, 1.0)
    }
}

pub(crate) fn to_u8(v: f32) -> u8 {
    (clamp01(v) * 255.0).round() as u8
}

pub(crate) fn bilinear(data: &[f32], width: usize, height: usize, x: f32, y: f32) -> f32 {
    let x = x.clamp(0.0, (width - 1) as f32);
    let y = y.clamp(0.0, (height - 1) as f32);
    let (x0, y0) = (x.floor() as usize, y.floor() as usize);
    let (x1, y1) = ((x0 + 1).min(width - 1), (y0 + 1).min(height - 1));
    let (fx, fy) = (x - x0 as f32, y - y0 as f32);
    let at = |xx: usize, yy: usize| data[yy * width + xx];
    let top = at(x0, y0) + (at(x1, y0) - at(x0, y0)) * fx;
    let bottom = at(x0, y1) + (at(x1, y1) - at(x0, y1)) * fx;
    top + (bottom - top) * fy
}

/// Half-pixel-centre bilinear resampling of a `src_w×src_h` grid.
pub(crate) fn resize_bilinear(
    src: &[f32],
    src_w: usize,
    src_h: usize,
    dst_w: usize,
    dst_h: usize,
) -> Vec<f32> {
    let sx = src_w as f32 / dst_w as f32;
    let sy = src_h as f32 / dst_h as f32;
    let mut out = Vec::with_capacity(dst_w * dst_h);
    for y in 0..dst_h {
        let fy = (y as f32 + 0.5) * sy - 0.5;
        for x in 0..dst_w {
            let fx = (x as f32 + 0.5) * sx - 0.5;
            out.push(bilinear(src, src_w, src_h, fx, fy));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_out_of_range_pixels() {
        assert!(matches!(GrayImage::new(1, 1, vec![1.5]), Err(Error::Domain(_))));
        assert!(matches!(GrayImage::new(2, 1, vec![0.5]), Err(Error::Dimension(_))));
    }

    #[test]
    fn resize_shape_and_constant_preservation() {
        let img = GrayImage::filled(512, 512, 0.25).unwrap();
        let small = img.resize(256, 256).unwrap();
        assert_eq!((small.width(), small.height()), (256, 256));
        assert!(small.pixels().iter().all(|&p| p == 0.25));
        assert_eq!(small.to_tensor().shape(), &[1, 256, 256]);
    }

    #[test]
    fn downsample_by_two_averages_pairs() {
        let img = GrayImage::from_fn(4, 1, |x, _| x as f32 / 4.0);
        let half = img.resize(2, 1).unwrap();
        assert!((half.pixels()[0] - 0.125).abs() < 1e-6);
        assert!((half.pixels()[1] - 0.625).abs() < 1e-6);
    }

    #[test]
    fn center_crop_keeps_middle() {
        let img = GrayImage::from_fn(4, 4, |x, y| (y * 4 + x) as f32 / 15.0);
        let c = img.center_crop(0.5).unwrap();
        assert_eq!((c.width(), c.height()), (2, 2));
        assert_eq!(c.get(0, 0), img.get(1, 1));
        assert_eq!(c.get(1, 1), img.get(2, 2));
        assert!(img.center_crop(0.0).is_err());
    }

    #[test]
    fn png_round_trip_and_16_bit() {
        let dir = tempfile::tempdir().unwrap();
        let img = GrayImage::from_fn(5, 3, |x, y| (x + y) as f32 / 6.0);
        let p = dir.path().join("a.png");
        img.save_png(&p).unwrap();
        let back = GrayImage::load(&p).unwrap();
        for (a, b) in img.pixels().iter().zip(back.pixels()) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-6);
        }

        let wide = image::ImageBuffer::<image::Luma<u16>, _>::from_raw(2, 1, vec![0u16, 65535])
            .unwrap();
        let p16 = dir.path().join("b.png");
        wide.save(&p16).unwrap();
        assert_eq!(GrayImage::load(&p16).unwrap().pixels(), &[0.0, 1.0]);

        let black = dir.path().join("c.pgm");
        Luma8::from_raw(3, 3, vec![0; 9]).unwrap().save(&black).unwrap();
        assert!(GrayImage::load(&black).unwrap().pixels().iter().all(|&p| p == 0.0));
    }

    #[test]
    fn missing_file_is_io_error_naming_path() {
        let e = GrayImage::load(Path::new("/nonexistent/x.png")).unwrap_err();
        assert!(matches!(e, Error::Io { .. }));
        assert!(e.to_string().contains("/nonexistent/x.png"));
    }
}
