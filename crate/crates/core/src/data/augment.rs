use serde::{Deserialize, Serialize};

use super::image::{bilinear, clamp01, GrayImage};
use crate::error::{Error, Result};
use crate::tensor::Rng;

/// Geometric and photometric jitter applied to one image.
///
/// Translation is a fraction of the image extent; `zoom` is the relative
/// scale change (0.1 enlarges by 10 %); `brightness` is added to every pixel.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Transform {
    pub rotation_deg: f32,
    pub translate_x: f32,
    pub translate_y: f32,
    pub zoom: f32,
    pub brightness: f32,
}

/// Symmetric bounds for each [`Transform`] field. No flips: chest films
/// encode laterality.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentRanges {
    pub rotation_deg: f32,
    pub translate: f32,
    pub zoom: f32,
    pub brightness: f32,
}

impl Default for AugmentRanges {
    fn default() -> Self {
        AugmentRanges {
            rotation_deg: 7.0,
            translate: 0.05,
            zoom: 0.10,
            brightness: 0.05,
        }
    }
}

impl AugmentRanges {
    pub fn sample(&self, rng: &mut Rng) -> Transform {
        let mut sym = |r: f32| rng.range(-r, r);
        Transform {
            rotation_deg: sym(self.rotation_deg),
            translate_x: sym(self.translate),
            translate_y: sym(self.translate),
            zoom: sym(self.zoom),
            brightness: sym(self.brightness),
        }
    }

    /// Rotation is compared modulo a full turn, so 360° counts as 0°.
    pub fn check(&self, t: &Transform) -> Result<()> {
        let wrapped = (t.rotation_deg + 180.0).rem_euclid(360.0) - 180.0;
        let checks = [
            ("rotation", wrapped, self.rotation_deg),
            ("translate_x", t.translate_x, self.translate),
            ("translate_y", t.translate_y, self.translate),
            ("zoom", t.zoom, self.zoom),
            ("brightness", t.brightness, self.brightness),
        ];
        for (name, v, bound) in checks {
            // Small slack absorbs the f32 round trip through the manifest.
            if !v.is_finite() || v.abs() > bound * (1.0 + 1e-5) + 1e-6 {
                return Err(Error::Config(format!(
                    "{name} {v} outside ±{bound}"
                )));
            }
        }
        Ok(())
    }
}

/// Applies `t` by inverse-mapping every output pixel about the image centre
/// and sampling bilinearly (edges clamped), then shifts brightness and
/// clamps to `[0, 1]`.
pub fn augment_image(img: &GrayImage, t: &Transform, ranges: &AugmentRanges) -> Result<GrayImage> {
    ranges.check(t)?;
    let (w, h) = (img.width(), img.height());
    let geometric = t.rotation_deg != 0.0 || t.translate_x != 0.0 || t.translate_y != 0.0 || t.zoom != 0.0;
    let base: Vec<f32> = if geometric {
        let theta = (t.rotation_deg as f64).to_radians();
        let (sin, cos) = theta.sin_cos();
        let scale = 1.0 + t.zoom as f64;
        let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
        let (tx, ty) = (t.translate_x as f64 * w as f64, t.translate_y as f64 * h as f64);
        let mut out = Vec::with_capacity(w * h);
        for y in 0..h {
            for x in 0..w {
                let dx = x as f64 - cx - tx;
                let dy = y as f64 - cy - ty;
                let sx = cx + (cos * dx + sin * dy) / scale;
                let sy = cy + (-sin * dx + cos * dy) / scale;
                out.push(bilinear(img.pixels(), w, h, sx as f32, sy as f32));
            }
        }
        out
    } else {
        img.pixels().to_vec()
    };
    let pixels = if t.brightness != 0.0 {
        base.into_iter().map(|p| clamp01(p + t.brightness)).collect()
    } else {
        base
    };
    GrayImage::new(w, h, pixels)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn textured(rng: &mut Rng) -> GrayImage {
        // Smooth enough that interpolation error stays small.
        let phase = rng.range(0.0, 6.0);
        GrayImage::from_fn(48, 48, |x, y| {
            0.5 + 0.3 * ((x as f32 * 0.3 + phase).sin() * (y as f32 * 0.2).cos())
        })
    }

    #[test]
    fn identity_is_pixel_exact() {
        let img = textured(&mut Rng::new(1));
        let out = augment_image(&img, &Transform::default(), &AugmentRanges::default()).unwrap();
        assert_eq!(out, img);
    }

    #[test]
    fn full_turn_round_trips() {
        let img = textured(&mut Rng::new(2));
        let t = Transform { rotation_deg: 360.0, ..Default::default() };
        let out = augment_image(&img, &t, &AugmentRanges::default()).unwrap();
        let mae: f64 = img
            .pixels()
            .iter()
            .zip(out.pixels())
            .map(|(a, b)| (a - b).abs() as f64)
            .sum::<f64>()
            / img.pixels().len() as f64;
        assert!(mae < 1e-3, "{mae}");
    }

    #[test]
    fn brightness_shifts_mean() {
        let img = GrayImage::filled(16, 16, 0.5).unwrap();
        let ranges = AugmentRanges { brightness: 0.1, ..Default::default() };
        let t = Transform { brightness: 0.1, ..Default::default() };
        let out = augment_image(&img, &t, &ranges).unwrap();
        assert!((out.mean() - img.mean() - 0.1).abs() < 1e-6);
    }

    #[test]
    fn output_stays_in_unit_range() {
        let mut rng = Rng::new(3);
        let ranges = AugmentRanges::default();
        let img = GrayImage::from_fn(20, 20, |x, _| if x % 2 == 0 { 1.0 } else { 0.0 });
        for _ in 0..50 {
            let t = ranges.sample(&mut rng);
            let out = augment_image(&img, &t, &ranges).unwrap();
            assert!(out.pixels().iter().all(|p| (0.0..=1.0).contains(p)));
        }
    }

    #[test]
    fn out_of_range_is_config_error() {
        let img = GrayImage::filled(8, 8, 0.5).unwrap();
        let r = AugmentRanges::default();
        for t in [
            Transform { rotation_deg: 10.0, ..Default::default() },
            Transform { translate_y: -0.2, ..Default::default() },
            Transform { zoom: 0.5, ..Default::default() },
            Transform { brightness: f32::NAN, ..Default::default() },
        ] {
            assert!(matches!(augment_image(&img, &t, &r), Err(Error::Config(_))));
        }
    }

    #[test]
    fn translation_moves_content() {
        let img = GrayImage::from_fn(20, 20, |x, y| if x == 5 && y == 5 { 1.0 } else { 0.0 });
        let t = Transform { translate_x: 0.05, ..Default::default() };
        let out = augment_image(&img, &t, &AugmentRanges::default()).unwrap();
        assert_eq!(out.get(6, 5), 1.0);
        assert_eq!(out.get(5, 5), 0.0);
    }
}
