use super::{expect_channels, Mode};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Per-channel batch normalization over `N×C×H×W` activations.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNorm2d {
    pub channels: usize,
    pub gamma: Tensor,
    pub beta: Tensor,
    pub running_mean: Tensor,
    pub running_var: Tensor,
    pub momentum: f32,
    pub epsilon: f32,
}

#[derive(Clone, Debug)]
pub struct BatchNormCache {
    mode: Mode,
    x_hat: Tensor,
    inv_std: Vec<f64>,
    batch_mean: Vec<f64>,
    batch_var: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct BatchNormGrads {
    pub input: Tensor,
    pub gamma: Tensor,
    pub beta: Tensor,
}

impl BatchNorm2d {
    pub fn new(channels: usize, momentum: f32, epsilon: f32) -> Result<Self> {
        if channels == 0 || !(0.0..1.0).contains(&momentum) || !(epsilon > 0.0) {
            return Err(Error::Config(format!(
                "batch norm needs channels > 0, momentum in [0,1), epsilon > 0 \
                 (got {channels}, {momentum}, {epsilon})"
            )));
        }
        Ok(BatchNorm2d {
            channels,
            gamma: Tensor::ones([channels]),
            beta: Tensor::zeros([channels]),
            running_mean: Tensor::zeros([channels]),
            running_var: Tensor::ones([channels]),
            momentum,
            epsilon,
        })
    }

    pub fn num_params(&self) -> usize {
        2 * self.channels
    }

    /// Train mode standardizes with the batch statistics; infer mode with the
    /// running statistics. Running statistics are not touched here, see
    /// [`BatchNorm2d::update_running_stats`].
    pub fn forward(&self, x: &Tensor, mode: Mode) -> Result<(Tensor, BatchNormCache)> {
        let (n, c, h, w) = x.dims4()?;
        expect_channels("batch norm", self.channels, c)?;
        let plane = h * w;
        let count = (n * plane) as f64;
        let (mean, var) = match mode {
            Mode::Train => {
                if n < 2 {
                    return Err(Error::Domain(format!(
                        "batch norm in train mode needs a batch of at least 2, got {n}"
                    )));
                }
                let mut mean = vec![0.0f64; c];
                let mut var = vec![0.0f64; c];
                for ch in 0..c {
                    let values = || {
                        (0..n).flat_map(move |s| {
                            let off = (s * c + ch) * plane;
                            x.data()[off..off + plane].iter().map(|&v| v as f64)
                        })
                    };
                    let m = values().sum::<f64>() / count;
                    mean[ch] = m;
                    var[ch] = values().map(|v| (v - m) * (v - m)).sum::<f64>() / count;
                }
                (mean, var)
            }
            Mode::Infer => (
                self.running_mean.data().iter().map(|&v| v as f64).collect(),
                self.running_var.data().iter().map(|&v| v as f64).collect(),
            ),
        };
        let inv_std: Vec<f64> = var
            .iter()
            .map(|&v| 1.0 / (v + self.epsilon as f64).sqrt())
            .collect();
        let mut x_hat = vec![0.0f32; x.len()];
        let mut y = vec![0.0f32; x.len()];
        for s in 0..n {
            for ch in 0..c {
                let off = (s * c + ch) * plane;
                let (g, b) = (self.gamma.data()[ch] as f64, self.beta.data()[ch] as f64);
                for i in off..off + plane {
                    let xh = (x.data()[i] as f64 - mean[ch]) * inv_std[ch];
                    x_hat[i] = xh as f32;
                    y[i] = (g * xh + b) as f32;
                }
            }
        }
        let shape = x.shape().to_vec();
        Ok((
            Tensor::from_parts(shape.clone(), y),
            BatchNormCache {
                mode,
                x_hat: Tensor::from_parts(shape, x_hat),
                inv_std,
                batch_mean: mean,
                batch_var: var,
            },
        ))
    }

    /// `r ← momentum·r + (1 − momentum)·batch_stat` for mean and (biased) variance.
    pub fn update_running_stats(&mut self, cache: &BatchNormCache) {
        if cache.mode != Mode::Train {
            return;
        }
        let m = self.momentum as f64;
        for (r, &b) in self.running_mean.data_mut().iter_mut().zip(&cache.batch_mean) {
            *r = (m * *r as f64 + (1.0 - m) * b) as f32;
        }
        for (r, &b) in self.running_var.data_mut().iter_mut().zip(&cache.batch_var) {
            *r = ((m * *r as f64 + (1.0 - m) * b) as f32).max(0.0);
        }
    }

    pub fn backward(&self, cache: &BatchNormCache, grad_out: &Tensor) -> Result<BatchNormGrads> {
        grad_out.expect_same_shape(&cache.x_hat)?;
        let (n, c, h, w) = grad_out.dims4()?;
        let plane = h * w;
        let count = (n * plane) as f64;
        let g = grad_out.data();
        let xh = cache.x_hat.data();
        let mut sum_g = vec![0.0f64; c];
        let mut sum_gx = vec![0.0f64; c];
        for s in 0..n {
            for ch in 0..c {
                let off = (s * c + ch) * plane;
                for i in off..off + plane {
                    sum_g[ch] += g[i] as f64;
                    sum_gx[ch] += g[i] as f64 * xh[i] as f64;
                }
            }
        }
        let mut dx = vec![0.0f32; g.len()];
        for s in 0..n {
            for ch in 0..c {
                let off = (s * c + ch) * plane;
                let scale = self.gamma.data()[ch] as f64 * cache.inv_std[ch];
                for i in off..off + plane {
                    dx[i] = match cache.mode {
                        Mode::Infer => (scale * g[i] as f64) as f32,
                        Mode::Train => {
                            let centered =
                                g[i] as f64 - sum_g[ch] / count - xh[i] as f64 * sum_gx[ch] / count;
                            (scale * centered) as f32
                        }
                    };
                }
            }
        }
        Ok(BatchNormGrads {
            input: Tensor::from_parts(grad_out.shape().to_vec(), dx),
            gamma: Tensor::from_parts(vec![c], sum_gx.into_iter().map(|v| v as f32).collect()),
            beta: Tensor::from_parts(vec![c], sum_g.into_iter().map(|v| v as f32).collect()),
        })
    }
}
