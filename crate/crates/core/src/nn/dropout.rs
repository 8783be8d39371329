use super::Mode;
use crate::error::{Error, Result};
use crate::tensor::{Rng, Tensor};

/// Inverted dropout: survivors are scaled by `1/(1-rate)` during training so
/// inference is the identity.
#[derive(Clone, Debug, PartialEq)]
pub struct Dropout {
    pub rate: f32,
}

#[derive(Clone, Debug)]
pub struct DropoutCache {
    /// `None` when the pass was the identity.
    mask: Option<Vec<f32>>,
}

impl Dropout {
    pub fn new(rate: f32) -> Result<Self> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Config(format!("dropout rate {rate} outside [0, 1)")));
        }
        Ok(Dropout { rate })
    }

    pub fn forward(
        &self,
        x: &Tensor,
        mode: Mode,
        rng: Option<&mut Rng>,
    ) -> Result<(Tensor, DropoutCache)> {
        if mode == Mode::Infer || self.rate == 0.0 {
            return Ok((x.clone(), DropoutCache { mask: None }));
        }
        let rng = rng.ok_or_else(|| {
            Error::Config("dropout in train mode needs a random source".into())
        })?;
        let keep = 1.0 / (1.0 - self.rate);
        let mask: Vec<f32> = (0..x.len())
            .map(|_| if rng.uniform() < self.rate { 0.0 } else { keep })
            .collect();
        let y = x.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
        Ok((
            Tensor::from_parts(x.shape().to_vec(), y),
            DropoutCache { mask: Some(mask) },
        ))
    }

    pub fn backward(&self, cache: &DropoutCache, grad_out: &Tensor) -> Result<Tensor> {
        match &cache.mask {
            None => Ok(grad_out.clone()),
            Some(mask) => {
                if mask.len() != grad_out.len() {
                    return Err(Error::Dimension(format!(
                        "dropout gradient has {} elements, mask has {}",
                        grad_out.len(),
                        mask.len()
                    )));
                }
                let g = grad_out.data().iter().zip(mask).map(|(&g, &m)| g * m).collect();
                Ok(Tensor::from_parts(grad_out.shape().to_vec(), g))
            }
        }
    }
}
