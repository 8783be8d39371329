use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::image::GrayImage;
use super::ClassLabel;
use crate::error::{Error, Result};
use crate::tensor::Rng;

pub const GROUND_TRUTH_FILE: &str = "ground_truth.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x: usize,
    pub y: usize,
    pub width: usize,
    pub height: usize,
}

impl BoundingBox {
    pub fn contains(&self, x: usize, y: usize) -> bool {
        x >= self.x && x < self.x + self.width && y >= self.y && y < self.y + self.height
    }

    /// The box in a `to`-sized image, given that it was drawn on a
    /// `from`-sized one (both `[height, width]`).
    pub fn rescale(&self, from: [usize; 2], to: [usize; 2]) -> BoundingBox {
        let sy = to[0] as f64 / from[0] as f64;
        let sx = to[1] as f64 / from[1] as f64;
        let x0 = (self.x as f64 * sx).floor() as usize;
        let y0 = (self.y as f64 * sy).floor() as usize;
        let x1 = ((self.x + self.width) as f64 * sx).ceil() as usize;
        let y1 = ((self.y + self.height) as f64 * sy).ceil() as usize;
        BoundingBox { x: x0, y: y0, width: x1 - x0, height: y1 - y0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthEntry {
    pub path: String,
    pub label: ClassLabel,
    pub patch: BoundingBox,
}

/// Sidecar listing the discriminative patch of every synthetic image.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub seed: u64,
    pub size: usize,
    pub entries: Vec<GroundTruthEntry>,
}

impl GroundTruth {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::parse("ground truth", e))
    }

    pub fn find(&self, path: &str) -> Option<&GroundTruthEntry> {
        self.entries.iter().find(|e| e.path == path)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthParams {
    pub per_class: usize,
    pub size: usize,
}

impl Default for SynthParams {
    fn default() -> Self {
        SynthParams { per_class: 60, size: 64 }
    }
}

/// Smooth low-frequency background plus mild pixel noise. Identical in
/// distribution for every class.
fn background(size: usize, rng: &mut Rng) -> Vec<f32> {
    let waves: Vec<(f32, f32, f32, f32)> = (0..3)
        .map(|_| {
            (
                rng.range(0.5, 2.0),
                rng.range(0.5, 2.0),
                rng.range(0.0, std::f32::consts::TAU),
                rng.range(0.015, 0.035),
            )
        })
        .collect();
    let n = size as f32;
    let mut px = Vec::with_capacity(size * size);
    for y in 0..size {
        for x in 0..size {
            let (u, v) = (x as f32 / n, y as f32 / n);
            let mut val = 0.4;
            for &(fx, fy, ph, amp) in &waves {
                val += amp * (std::f32::consts::TAU * (fx * u + fy * v) + ph).sin();
            }
            val += 0.04 * rng.normal();
            px.push(val);
        }
    }
    px
}

/// Class texture at patch-local coordinates `(u, v)`, both in `[0, side)`.
fn texture(class: ClassLabel, u: f32, v: f32, side: f32, phase: f32) -> f32 {
    match class {
        // Horizontal stripes with a 6-pixel period.
        ClassLabel::Normal => 0.22 * (std::f32::consts::TAU * (v + phase) / 6.0).sin(),
        // Hazy bright blob.
        ClassLabel::Covid => {
            let c = side / 2.0 - 0.5;
            let r2 = (u - c).powi(2) + (v - c).powi(2);
            0.4 * (-r2 / (2.0 * (side / 4.0).powi(2))).exp()
        }
        // Grid of small bright dots.
        ClassLabel::Pneumonia => {
            let du = (u + phase).rem_euclid(6.0) - 3.0;
            let dv = (v + phase).rem_euclid(6.0) - 3.0;
            if du * du + dv * dv <= 2.5 {
                0.3
            } else {
                -0.05
            }
        }
    }
}

/// Writes `per_class` PNGs under `<out>/{Normal,Covid,Pneumonia}` and the
/// patch boxes to `<out>/ground_truth.json`.
///
/// Each image is a shared-distribution background with a class-specific
/// texture in a square patch (3/8 of the extent) at a random position.
pub fn generate_synthetic(out_dir: &Path, params: &SynthParams, seed: u64) -> Result<GroundTruth> {
    if params.per_class < 4 {
        return Err(Error::Config(format!(
            "per_class {} < 4",
            params.per_class
        )));
    }
    if params.size < 16 {
        return Err(Error::Config(format!("image size {} < 16", params.size)));
    }
    let size = params.size;
    let side = size * 3 / 8;
    let root = Rng::new(seed);
    let mut entries = Vec::new();
    for class in ClassLabel::ALL {
        let dir = out_dir.join(class.dir_name());
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        for i in 0..params.per_class {
            let mut rng = root.child(((class.index() as u64) << 32) | i as u64);
            let mut px = background(size, &mut rng);
            let x0 = rng.below(size - side + 1);
            let y0 = rng.below(size - side + 1);
            let phase = rng.range(0.0, 6.0);
            for v in 0..side {
                for u in 0..side {
                    px[(y0 + v) * size + x0 + u] +=
                        texture(class, u as f32, v as f32, side as f32, phase);
                }
            }
            let img = GrayImage::from_fn(size, size, |x, y| px[y * size + x]);
            let name = format!("{}_{i:03}.png", class.dir_name().to_lowercase());
            img.save_png(&dir.join(&name))?;
            entries.push(GroundTruthEntry {
                path: format!("{}/{name}", class.dir_name()),
                label: class,
                patch: BoundingBox { x: x0, y: y0, width: side, height: side },
            });
        }
    }
    let gt = GroundTruth { seed, size, entries };
    let path = out_dir.join(GROUND_TRUTH_FILE);
    let text = serde_json::to_string_pretty(&gt).expect("ground truth serializes") + "\n";
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(gt)
}
