//! Gradient-weighted class activation maps and colour overlays.

use std::fmt::Write as _;
use std::path::Path;

use image::{Rgb, RgbImage};

use crate::data::{BoundingBox, GrayImage};
use crate::error::{Error, Result};
use crate::model::{Layer, Model, NUM_CLASSES};
use crate::tensor::Tensor;

/// A class activation map at input resolution, values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Heatmap {
    /// `H×W`.
    pub values: Tensor,
    pub target_class: usize,
    pub target_layer: usize,
    pub source_path: Option<String>,
}

/// Intermediate GradCAM quantities, kept for inspection and tests.
#[derive(Clone, Debug, PartialEq)]
pub struct CamResult {
    pub heatmap: Heatmap,
    /// Spatial mean of the class-score gradient per feature map.
    pub weights: Vec<f32>,
    /// `ReLU(Σ_k α_k A^k)` at the target layer's resolution.
    pub raw: Tensor,
    /// Layer whose output supplied the feature maps `A^k`.
    pub feature_layer: usize,
    /// True when the map was constant and the heatmap was zeroed.
    pub degenerate: bool,
}

impl Heatmap {
    pub fn height(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.values.shape()[1]
    }

    /// One row per line, comma-separated.
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        for row in self.values.data().chunks(self.width()) {
            let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            let _ = writeln!(s, "{}", line.join(","));
        }
        s
    }
}

/// Index of the deepest convolution, the default GradCAM target.
pub fn last_conv_layer(model: &Model) -> Result<usize> {
    model
        .layers()
        .iter()
        .rposition(|l| matches!(l, Layer::Conv(_)))
        .ok_or_else(|| Error::Config("model has no convolution layer".into()))
}

/// The layer holding a convolution's rectified feature maps: the conv itself
/// or the end of the batch-norm / ReLU run that directly follows it.
pub fn feature_layer(model: &Model, conv: usize) -> usize {
    let mut j = conv;
    while matches!(model.layers().get(j + 1), Some(Layer::BatchNorm(_) | Layer::Relu)) {
        j += 1;
    }
    j
}

/// GradCAM for one image (`C×H×W` or `1×C×H×W`) in inference mode.
///
/// The pre-softmax score of `target_class` is backpropagated to the feature
/// maps of convolution `target_layer` (the deepest one when `None`), taken
/// after any batch norm and ReLU that directly follow it. The raw map
/// is bilinearly upsampled to the input size and then min-max normalized;
/// a constant map yields all zeros.
pub fn gradcam(
    model: &Model,
    image: &Tensor,
    target_class: usize,
    target_layer: Option<usize>,
) -> Result<CamResult> {
    if target_class >= NUM_CLASSES {
        return Err(Error::Config(format!(
            "target class {target_class} out of range"
        )));
    }
    let layer = match target_layer {
        Some(i) => {
            match model.layers().get(i) {
                Some(Layer::Conv(_)) => i,
                Some(other) => {
                    return Err(Error::Config(format!(
                        "GradCAM target layer {i} is {}, not a convolution",
                        other.kind()
                    )))
                }
                None => {
                    return Err(Error::Config(format!(
                        "GradCAM target layer {i} does not exist ({} layers)",
                        model.layers().len()
                    )))
                }
            }
        }
        None => last_conv_layer(model)?,
    };
    let x = match image.rank() {
        3 => image.clone().reshape([1, image.shape()[0], image.shape()[1], image.shape()[2]])?,
        4 if image.shape()[0] == 1 => image.clone(),
        _ => {
            return Err(Error::Dimension(format!(
                "GradCAM takes one image, got shape {:?}",
                image.shape()
            )))
        }
    };
    let (_, _, in_h, in_w) = x.dims4()?;

    let pass = model.infer(&x)?;
    let mut onehot = Tensor::zeros([1, NUM_CLASSES]);
    onehot.data_mut()[target_class] = 1.0;
    let features = feature_layer(model, layer);
    let grad = model.grad_at_layer(&pass, &onehot, features)?;
    let acts = &pass.activations[features];
    let (_, k, h, w) = acts.dims4()?;
    let hw = h * w;

    let weights: Vec<f32> = grad
        .data()
        .chunks(hw)
        .map(|g| (g.iter().map(|&v| v as f64).sum::<f64>() / hw as f64) as f32)
        .collect();
    let mut raw = vec![0.0f64; hw];
    for (a, &alpha) in acts.data().chunks(hw).zip(&weights).take(k) {
        for (r, &v) in raw.iter_mut().zip(a) {
            *r += alpha as f64 * v as f64;
        }
    }
    let raw: Vec<f32> = raw.into_iter().map(|v| v.max(0.0) as f32).collect();

    let up = if (h, w) == (in_h, in_w) {
        raw.clone()
    } else {
        crate::data::resize_map(&raw, w, h, in_w, in_h)
    };
    let (lo, hi) = up
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let degenerate = !(hi > lo);
    let values = if degenerate {
        log::warn!("GradCAM map for class {target_class} at layer {layer} is constant; heatmap set to zero");
        vec![0.0; up.len()]
    } else {
        let span = hi - lo;
        up.iter().map(|&v| ((v - lo) / span).clamp(0.0, 1.0)).collect()
    };
    Ok(CamResult {
        heatmap: Heatmap {
            values: Tensor::new([in_h, in_w], values)?,
            target_class,
            target_layer: layer,
            source_path: None,
        },
        weights,
        raw: Tensor::new([h, w], raw)?,
        feature_layer: features,
        degenerate,
    })
}

/// Monotone black → red → yellow → white ramp; every channel is
/// non-decreasing in `t`.
pub fn colormap(t: f32) -> [u8; 3] {
    let t = t.clamp(0.0, 1.0) * 3.0;
    let ch = |v: f32| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
    [ch(t), ch(t - 1.0), ch(t - 2.0)]
}

/// Blends `(1 − alpha) · gray + alpha · colormap(hm)` into an RGB image.
pub fn overlay(img: &GrayImage, hm: &Heatmap, alpha: f32) -> Result<RgbImage> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Config(format!("overlay alpha {alpha} outside [0, 1]")));
    }
    if (img.height(), img.width()) != (hm.height(), hm.width()) {
        return Err(Error::Dimension(format!(
            "image is {}×{} but heatmap is {}×{}",
            img.height(),
            img.width(),
            hm.height(),
            hm.width()
        )));
    }
    let mut out = RgbImage::new(img.width() as u32, img.height() as u32);
    for (i, (px, &v)) in out.pixels_mut().zip(hm.values.data()).enumerate() {
        let gray = img.pixels()[i] * 255.0;
        let color = colormap(v);
        *px = Rgb(color.map(|c| {
            ((1.0 - alpha) * gray + alpha * c as f32).round().clamp(0.0, 255.0) as u8
        }));
    }
    Ok(out)
}

pub fn save_overlay(rgb: &RgbImage, path: &Path) -> Result<()> {
    rgb.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| match e {
            image::ImageError::IoError(io) => Error::Io { path: path.to_path_buf(), source: io },
            other => Error::Image { path: path.to_path_buf(), message: other.to_string() },
        })
}

/// Fraction of the top-decile heatmap pixels (at least one; ties resolved
/// in row-major order) that fall inside `bbox`.
pub fn top_decile_inside(hm: &Heatmap, bbox: &BoundingBox) -> f64 {
    let w = hm.width();
    let mut order: Vec<usize> = (0..hm.values.len()).collect();
    let v = hm.values.data();
    order.sort_by(|&a, &b| v[b].total_cmp(&v[a]).then(a.cmp(&b)));
    let k = hm.values.len().div_ceil(10).max(1);
    let inside = order[..k]
        .iter()
        .filter(|&&i| bbox.contains(i % w, i / w))
        .count();
    inside as f64 / k as f64
}
