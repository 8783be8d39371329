//! Layers with explicit forward/backward passes.
//!
//! Each layer's `forward` returns its output together with a cache holding
//! exactly what `backward` needs. Nothing is recorded implicitly, so every
//! layer can be checked against finite differences in isolation.

mod activation;
mod batchnorm;
mod conv;
mod dense;
mod dropout;
mod pool;

pub use activation::{relu, relu_backward, softmax, softmax_backward};
pub use batchnorm::{BatchNorm2d, BatchNormCache, BatchNormGrads};
pub use conv::{Conv2d, ConvCache, ConvGrads};
pub use dense::{Dense, DenseCache, DenseGrads};
pub use dropout::{Dropout, DropoutCache};
pub use pool::{MaxPool2d, MaxPoolCache};

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Pad2d;

/// Batch-norm defaults used when a config omits them.
pub mod batchnorm_defaults {
    pub const MOMENTUM: f32 = 0.9;
    pub const EPSILON: f32 = 1e-5;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// Spatial padding policy for convolution and pooling windows.
///
/// `Same` keeps `ceil(extent / stride)` outputs and splits the required
/// padding symmetrically, putting the odd cell on the bottom/right.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "PaddingRepr", into = "PaddingRepr")]
pub enum Padding {
    Same,
    Explicit(usize),
}

impl Padding {
    pub fn resolve(self, (h, w): (usize, usize), (kh, kw): (usize, usize), stride: usize) -> Pad2d {
        match self {
            Padding::Explicit(p) => Pad2d::uniform(p),
            Padding::Same => {
                let split = |extent: usize, k: usize| {
                    let out = extent.div_ceil(stride.max(1));
                    let total = ((out.max(1) - 1) * stride + k).saturating_sub(extent);
                    (total / 2, total - total / 2)
                };
                let (top, bottom) = split(h, kh);
                let (left, right) = split(w, kw);
                Pad2d {
                    top,
                    bottom,
                    left,
                    right,
                }
            }
        }
    }
}

/// Padding and output extent of a sliding window. Explicit padding must tile
/// the padded plane exactly; "same" keeps `ceil(extent / stride)` outputs and
/// leaves trailing cells unread when the stride exceeds the window.
pub(crate) fn window_geometry(
    padding: Padding,
    (h, w): (usize, usize),
    window: (usize, usize),
    stride: usize,
) -> Result<(Pad2d, (usize, usize))> {
    let pad = padding.resolve((h, w), window, stride);
    match padding {
        Padding::Explicit(_) => Ok((pad, pad.output_extent((h, w), window, stride)?)),
        Padding::Same => {
            if window.0 == 0 || window.1 == 0 || stride == 0 || h == 0 || w == 0 {
                return Err(Error::Config(format!(
                    "window {window:?}, stride {stride} and input {h}×{w} must be positive"
                )));
            }
            Ok((pad, (h.div_ceil(stride), w.div_ceil(stride))))
        }
    }
}

impl fmt::Display for Padding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Padding::Same => f.write_str("same"),
            Padding::Explicit(p) => write!(f, "{p}"),
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum PaddingRepr {
    Name(String),
    Cells(usize),
}

impl TryFrom<PaddingRepr> for Padding {
    type Error = String;

    fn try_from(r: PaddingRepr) -> std::result::Result<Self, String> {
        match r {
            PaddingRepr::Cells(p) => Ok(Padding::Explicit(p)),
            PaddingRepr::Name(s) => match s.as_str() {
                "same" => Ok(Padding::Same),
                "valid" => Ok(Padding::Explicit(0)),
                other => Err(format!(
                    "unknown padding {other:?} (expected \"same\", \"valid\" or a cell count)"
                )),
            },
        }
    }
}

impl From<Padding> for PaddingRepr {
    fn from(p: Padding) -> Self {
        match p {
            Padding::Same => PaddingRepr::Name("same".into()),
            Padding::Explicit(p) => PaddingRepr::Cells(p),
        }
    }
}

pub(crate) fn expect_channels(layer: &str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::Dimension(format!(
            "{layer} expects {expected} input channels, got {got}"
        )));
    }
    Ok(())
}
