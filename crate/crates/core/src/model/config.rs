use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Conv2d, MaxPool2d, Padding};

/// Number of output classes (Normal, Covid, Pneumonia).
pub const NUM_CLASSES: usize = 3;

/// One entry of the layer list. Serialized with a `kind` tag.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum LayerSpec {
    Conv {
        filters: usize,
        #[serde(default = "default_kernel")]
        kernel: [usize; 2],
        #[serde(default = "default_stride")]
        stride: usize,
        #[serde(default = "default_padding")]
        padding: Padding,
    },
    Bn {
        #[serde(default = "default_momentum")]
        momentum: f32,
        #[serde(default = "default_epsilon")]
        epsilon: f32,
    },
    Relu,
    Maxpool {
        #[serde(default = "default_window")]
        window: [usize; 2],
        #[serde(default = "default_pool_stride")]
        stride: usize,
        #[serde(default = "default_pool_padding")]
        padding: Padding,
    },
    Dropout {
        rate: f32,
    },
    Flatten,
    Dense {
        units: usize,
    },
    Softmax,
}

fn default_kernel() -> [usize; 2] {
    [3, 3]
}
fn default_stride() -> usize {
    1
}
fn default_padding() -> Padding {
    Padding::Same
}
fn default_momentum() -> f32 {
    crate::nn::batchnorm_defaults::MOMENTUM
}
fn default_epsilon() -> f32 {
    crate::nn::batchnorm_defaults::EPSILON
}
fn default_window() -> [usize; 2] {
    [2, 2]
}
fn default_pool_stride() -> usize {
    2
}
fn default_pool_padding() -> Padding {
    Padding::Explicit(0)
}

impl LayerSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            LayerSpec::Conv { .. } => "conv",
            LayerSpec::Bn { .. } => "bn",
            LayerSpec::Relu => "relu",
            LayerSpec::Maxpool { .. } => "maxpool",
            LayerSpec::Dropout { .. } => "dropout",
            LayerSpec::Flatten => "flatten",
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::Softmax => "softmax",
        }
    }

    pub fn conv(filters: usize) -> Self {
        LayerSpec::Conv {
            filters,
            kernel: default_kernel(),
            stride: 1,
            padding: Padding::Same,
        }
    }

    pub fn bn() -> Self {
        LayerSpec::Bn {
            momentum: default_momentum(),
            epsilon: default_epsilon(),
        }
    }

    pub fn maxpool(size: usize) -> Self {
        LayerSpec::Maxpool {
            window: [size, size],
            stride: size,
            padding: Padding::Explicit(0),
        }
    }
}

/// Activation shape after a layer, without the batch axis.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ActShape {
    /// `C×H×W`
    Spatial(usize, usize, usize),
    Flat(usize),
}

impl ActShape {
    pub fn dims(&self) -> Vec<usize> {
        match *self {
            ActShape::Spatial(c, h, w) => vec![c, h, w],
            ActShape::Flat(f) => vec![f],
        }
    }
}

/// Declarative network description: input shape, ordered layers, init seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// `[channels, height, width]`; grayscale inputs have one channel.
    pub input_shape: [usize; 3],
    pub seed: u64,
    pub layers: Vec<LayerSpec>,
}

/// Result of validating a config: the activation shape after every layer and
/// the trainable scalar count of every layer.
#[derive(Clone, Debug)]
pub struct ShapeTrace {
    pub outputs: Vec<ActShape>,
    pub params: Vec<usize>,
}

impl ModelConfig {
    /// The full-size network: six conv blocks with filters
    /// 128, 64, 32, 64, 128, 64 on a 256×256 input, each block
    /// conv → BN → ReLU → 2×2 max pool → dropout(0.25), then
    /// flatten → dense 512 → ReLU → dropout(0.5) → dense 3 → softmax.
    pub fn reference() -> Self {
        Self::blocks([1, 256, 256], &[128, 64, 32, 64, 128, 64], 2, 0.25, 512, 0.5, 42)
    }

    /// Two-block network for 64×64 inputs, small enough to train on a single
    /// core in seconds.
    pub fn desk_scale() -> Self {
        let mut layers = Vec::new();
        for (filters, pool) in [(8, 2), (16, 4)] {
            layers.extend([
                LayerSpec::conv(filters),
                LayerSpec::bn(),
                LayerSpec::Relu,
                LayerSpec::maxpool(pool),
                LayerSpec::Dropout { rate: 0.1 },
            ]);
        }
        layers.extend([
            LayerSpec::Flatten,
            LayerSpec::Dense { units: 32 },
            LayerSpec::Relu,
            LayerSpec::Dropout { rate: 0.1 },
            LayerSpec::Dense { units: NUM_CLASSES },
            LayerSpec::Softmax,
        ]);
        ModelConfig {
            input_shape: [1, 64, 64],
            seed: 7,
            layers,
        }
    }

    /// Uniform blocks of conv → BN → ReLU → pool → dropout followed by the
    /// dense head.
    pub fn blocks(
        input_shape: [usize; 3],
        filters: &[usize],
        pool: usize,
        block_dropout: f32,
        hidden: usize,
        head_dropout: f32,
        seed: u64,
    ) -> Self {
        let mut layers = Vec::new();
        for &f in filters {
            layers.extend([
                LayerSpec::conv(f),
                LayerSpec::bn(),
                LayerSpec::Relu,
                LayerSpec::maxpool(pool),
                LayerSpec::Dropout { rate: block_dropout },
            ]);
        }
        layers.extend([
            LayerSpec::Flatten,
            LayerSpec::Dense { units: hidden },
            LayerSpec::Relu,
            LayerSpec::Dropout { rate: head_dropout },
            LayerSpec::Dense { units: NUM_CLASSES },
            LayerSpec::Softmax,
        ]);
        ModelConfig {
            input_shape,
            seed,
            layers,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ModelConfig =
            toml::from_str(text).map_err(|e| Error::parse("model config", e))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("model config serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Parse { message, .. } => {
                Error::parse(format!("model config {}", path.display()), message)
            }
            other => other,
        })
    }

    pub fn conv_filters(&self) -> Vec<usize> {
        self.layers
            .iter()
            .filter_map(|l| match l {
                LayerSpec::Conv { filters, .. } => Some(*filters),
                _ => None,
            })
            .collect()
    }

    pub fn conv_layer_indices(&self) -> Vec<usize> {
        self.layers
            .iter()
            .enumerate()
            .filter(|(_, l)| matches!(l, LayerSpec::Conv { .. }))
            .map(|(i, _)| i)
            .collect()
    }

    /// Checks the shape chain, the V-shaped filter schedule and the
    /// classifier head, returning per-layer shapes and parameter counts.
    pub fn validate(&self) -> Result<ShapeTrace> {
        let [c, h, w] = self.input_shape;
        if c == 0 || h == 0 || w == 0 {
            return Err(Error::Config(format!(
                "input shape {:?} has a zero extent",
                self.input_shape
            )));
        }
        let fail = |i: usize, spec: &LayerSpec, msg: String| {
            Error::Config(format!("layer {i} ({}): {msg}", spec.kind()))
        };
        let mut shape = ActShape::Spatial(c, h, w);
        let mut outputs = Vec::with_capacity(self.layers.len());
        let mut params = Vec::with_capacity(self.layers.len());
        for (i, spec) in self.layers.iter().enumerate() {
            let spatial = |s: ActShape| match s {
                ActShape::Spatial(c, h, w) => Ok((c, h, w)),
                ActShape::Flat(_) => Err(fail(i, spec, "needs a C×H×W input".into())),
            };
            let (next, count) = match *spec {
                LayerSpec::Conv {
                    filters,
                    kernel,
                    stride,
                    padding,
                } => {
                    let (c, h, w) = spatial(shape)?;
                    let conv = Conv2d::new(c, filters, (kernel[0], kernel[1]), stride, padding)
                        .map_err(|e| fail(i, spec, e.to_string()))?;
                    let (oh, ow) = conv
                        .output_hw(h, w)
                        .map_err(|e| fail(i, spec, e.to_string()))?;
                    (ActShape::Spatial(filters, oh, ow), conv.num_params())
                }
                LayerSpec::Bn { momentum, epsilon } => {
                    let (c, _, _) = spatial(shape)?;
                    if !(0.0..1.0).contains(&momentum) || !(epsilon > 0.0) {
                        return Err(fail(
                            i,
                            spec,
                            format!("momentum {momentum} / epsilon {epsilon} out of range"),
                        ));
                    }
                    (shape, 2 * c)
                }
                LayerSpec::Relu => (shape, 0),
                LayerSpec::Maxpool {
                    window,
                    stride,
                    padding,
                } => {
                    let (c, h, w) = spatial(shape)?;
                    let pool = MaxPool2d::new((window[0], window[1]), stride, padding)
                        .map_err(|e| fail(i, spec, e.to_string()))?;
                    let (oh, ow) = pool
                        .output_hw(h, w)
                        .map_err(|e| fail(i, spec, e.to_string()))?;
                    (ActShape::Spatial(c, oh, ow), 0)
                }
                LayerSpec::Dropout { rate } => {
                    if !(0.0..1.0).contains(&rate) {
                        return Err(fail(i, spec, format!("rate {rate} outside [0, 1)")));
                    }
                    (shape, 0)
                }
                LayerSpec::Flatten => {
                    let (c, h, w) = spatial(shape)?;
                    (ActShape::Flat(c * h * w), 0)
                }
                LayerSpec::Dense { units } => {
                    let ActShape::Flat(f) = shape else {
                        return Err(fail(i, spec, "needs a flat input; add a flatten layer".into()));
                    };
                    if units == 0 {
                        return Err(fail(i, spec, "units must be positive".into()));
                    }
                    (ActShape::Flat(units), units * f + units)
                }
                LayerSpec::Softmax => {
                    if i + 1 != self.layers.len() {
                        return Err(fail(i, spec, "softmax must be the last layer".into()));
                    }
                    match shape {
                        ActShape::Flat(k) if k == NUM_CLASSES => (shape, 0),
                        _ => {
                            return Err(fail(
                                i,
                                spec,
                                format!("expects {NUM_CLASSES} logits, got {:?}", shape.dims()),
                            ))
                        }
                    }
                }
            };
            shape = next;
            outputs.push(next);
            params.push(count);
        }
        match self.layers.last() {
            Some(LayerSpec::Softmax) => {}
            _ => {
                return Err(Error::Config(
                    "the last layer must be softmax over the class logits".into(),
                ))
            }
        }
        if !matches!(self.layers.first(), Some(LayerSpec::Conv { .. })) {
            return Err(Error::Config("layer 0 must be a conv layer".into()));
        }
        check_v_shape(&self.conv_filters())?;
        Ok(ShapeTrace { outputs, params })
    }

    /// Trainable scalars: conv and dense weights plus biases, batch-norm
    /// γ and β. Running statistics are not counted.
    pub fn count_params(&self) -> Result<usize> {
        Ok(self.validate()?.params.iter().sum())
    }

    /// Architectural constraints of the full-size network beyond what
    /// [`ModelConfig::validate`] enforces: 64 filters in the last conv
    /// layer and a dense(512) → dense(3) → softmax head.
    pub fn check_reference_head(&self) -> Result<()> {
        self.validate()?;
        if self.conv_filters().last() != Some(&64) {
            return Err(Error::Config("last conv layer must have 64 filters".into()));
        }
        let dense: Vec<usize> = self
            .layers
            .iter()
            .filter_map(|l| match l {
                LayerSpec::Dense { units } => Some(*units),
                _ => None,
            })
            .collect();
        if dense != [512, NUM_CLASSES] {
            return Err(Error::Config(format!(
                "head must be dense 512 → dense {NUM_CLASSES}, got {dense:?}"
            )));
        }
        Ok(())
    }
}

fn is_v(filters: &[usize]) -> bool {
    let mut rising = false;
    for pair in filters.windows(2) {
        if pair[1] > pair[0] {
            rising = true;
        } else if pair[1] < pair[0] && rising {
            return false;
        }
    }
    true
}

/// Filter counts must be non-increasing, then non-decreasing. The last conv
/// layer may additionally narrow (the pre-flatten reduction) provided the
/// layers before it form a V with a real descending arm.
pub fn check_v_shape(filters: &[usize]) -> Result<()> {
    if is_v(filters) {
        return Ok(());
    }
    if let [body @ .., penultimate, last] = filters {
        let mut body = body.to_vec();
        body.push(*penultimate);
        let descends = body.iter().min().is_some_and(|&m| body[0] > m);
        if last < penultimate && is_v(&body) && descends {
            return Ok(());
        }
    }
    Err(Error::Config(format!(
        "conv filter schedule {filters:?} is not V-shaped"
    )))
}
