use crate::error::{Error, Result};
use crate::tensor::{gemm, Rng, Tensor, Transpose};

/// Fully connected layer, `y = x·Wᵀ + b`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub in_features: usize,
    pub out_features: usize,
    /// `out × in`
    pub weight: Tensor,
    pub bias: Tensor,
}

#[derive(Clone, Debug)]
pub struct DenseCache {
    input: Tensor,
}

#[derive(Clone, Debug)]
pub struct DenseGrads {
    pub input: Tensor,
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Dense {
    pub fn new(in_features: usize, out_features: usize) -> Result<Self> {
        if in_features == 0 || out_features == 0 {
            return Err(Error::Config(format!(
                "dense {in_features}→{out_features}: extents must be positive"
            )));
        }
        Ok(Dense {
            in_features,
            out_features,
            weight: Tensor::zeros([out_features, in_features]),
            bias: Tensor::zeros([out_features]),
        })
    }

    pub fn init_he_uniform(&mut self, rng: &mut Rng) {
        let limit = (6.0 / self.in_features as f32).sqrt();
        self.weight = Tensor::uniform([self.out_features, self.in_features], -limit, limit, rng);
        self.bias = Tensor::zeros([self.out_features]);
    }

    pub fn num_params(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, DenseCache)> {
        let (n, f) = x.dims2()?;
        if f != self.in_features {
            return Err(Error::Dimension(format!(
                "dense expects {} input features, got {f}",
                self.in_features
            )));
        }
        let mut y = gemm(
            x.data(),
            Transpose::No,
            self.weight.data(),
            Transpose::Yes,
            n,
            f,
            self.out_features,
        );
        for row in y.chunks_mut(self.out_features) {
            row.iter_mut().zip(self.bias.data()).for_each(|(v, &b)| *v += b);
        }
        Ok((
            Tensor::from_parts(vec![n, self.out_features], y),
            DenseCache { input: x.clone() },
        ))
    }

    pub fn backward(&self, cache: &DenseCache, grad_out: &Tensor) -> Result<DenseGrads> {
        let (n, f) = cache.input.dims2()?;
        if grad_out.shape() != [n, self.out_features] {
            return Err(Error::Dimension(format!(
                "dense gradient has shape {:?}, expected [{n}, {}]",
                grad_out.shape(),
                self.out_features
            )));
        }
        let o = self.out_features;
        let dx = gemm(grad_out.data(), Transpose::No, self.weight.data(), Transpose::No, n, o, f);
        let dw = gemm(grad_out.data(), Transpose::Yes, cache.input.data(), Transpose::No, o, n, f);
        let mut db = vec![0.0f64; o];
        for row in grad_out.data().chunks(o) {
            db.iter_mut().zip(row).for_each(|(a, &g)| *a += g as f64);
        }
        Ok(DenseGrads {
            input: Tensor::from_parts(vec![n, f], dx),
            weight: Tensor::from_parts(vec![o, f], dw),
            bias: Tensor::from_parts(vec![o], db.into_iter().map(|v| v as f32).collect()),
        })
    }
}
