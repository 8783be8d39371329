use super::{expect_channels, window_geometry, Padding};
use crate::error::{Error, Result};
use crate::tensor::ops::{col2im_into, im2col_into, ConvGeometry};
use crate::tensor::{gemm, Pad2d, Rng, Tensor, Transpose};

/// 2-D convolution, lowered to im2col + GEMM per sample.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv2d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: (usize, usize),
    pub stride: usize,
    pub padding: Padding,
    /// `out × in × kh × kw`
    pub weight: Tensor,
    /// `out`
    pub bias: Tensor,
}

#[derive(Clone, Debug)]
pub struct ConvCache {
    input: Tensor,
    pad: Pad2d,
}

#[derive(Clone, Debug)]
pub struct ConvGrads {
    pub input: Tensor,
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Conv2d {
    /// Zero-initialized layer.
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: (usize, usize),
        stride: usize,
        padding: Padding,
    ) -> Result<Self> {
        if in_channels == 0 || out_channels == 0 || kernel.0 == 0 || kernel.1 == 0 || stride == 0 {
            return Err(Error::Config(format!(
                "conv {in_channels}→{out_channels}, kernel {kernel:?}, stride {stride}: all must be positive"
            )));
        }
        Ok(Conv2d {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
            weight: Tensor::zeros([out_channels, in_channels, kernel.0, kernel.1]),
            bias: Tensor::zeros([out_channels]),
        })
    }

    /// He-uniform weights, zero bias.
    pub fn init_he_uniform(&mut self, rng: &mut Rng) {
        let limit = (6.0 / self.fan_in() as f32).sqrt();
        self.weight = Tensor::uniform(self.weight.shape().to_vec(), -limit, limit, rng);
        self.bias = Tensor::zeros([self.out_channels]);
    }

    pub fn fan_in(&self) -> usize {
        self.in_channels * self.kernel.0 * self.kernel.1
    }

    pub fn num_params(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    /// Output spatial extent for an `h×w` input.
    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        Ok(window_geometry(self.padding, (h, w), self.kernel, self.stride)?.1)
    }

    fn geometry(&self, h: usize, w: usize) -> Result<ConvGeometry> {
        let (pad, (out_h, out_w)) = window_geometry(self.padding, (h, w), self.kernel, self.stride)?;
        Ok(ConvGeometry {
            channels: self.in_channels,
            h,
            w,
            kh: self.kernel.0,
            kw: self.kernel.1,
            stride: self.stride,
            pad,
            out_h,
            out_w,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, ConvCache)> {
        let (n, c, h, w) = x.dims4()?;
        expect_channels("conv", self.in_channels, c)?;
        let g = self.geometry(h, w)?;
        let (k, hw) = (g.rows(), g.cols());
        let mut cols = vec![0.0; k * hw];
        let mut out = Vec::with_capacity(n * self.out_channels * hw);
        let plane = c * h * w;
        for s in 0..n {
            im2col_into(&x.data()[s * plane..(s + 1) * plane], &g, &mut cols);
            let mut y = gemm(
                self.weight.data(),
                Transpose::No,
                &cols,
                Transpose::No,
                self.out_channels,
                k,
                hw,
            );
            for (o, chunk) in y.chunks_mut(hw).enumerate() {
                let b = self.bias.data()[o];
                chunk.iter_mut().for_each(|v| *v += b);
            }
            out.extend_from_slice(&y);
        }
        let y = Tensor::from_parts(vec![n, self.out_channels, g.out_h, g.out_w], out);
        Ok((
            y,
            ConvCache {
                input: x.clone(),
                pad: g.pad,
            },
        ))
    }

    pub fn backward(&self, cache: &ConvCache, grad_out: &Tensor) -> Result<ConvGrads> {
        let (n, c, h, w) = cache.input.dims4()?;
        let g = self.geometry(h, w)?;
        debug_assert_eq!(g.pad, cache.pad);
        let expected = [n, self.out_channels, g.out_h, g.out_w];
        if grad_out.shape() != expected {
            return Err(Error::Dimension(format!(
                "conv gradient has shape {:?}, forward output was {expected:?}",
                grad_out.shape()
            )));
        }
        let (k, hw) = (g.rows(), g.cols());
        let plane = c * h * w;
        let out_plane = self.out_channels * hw;
        let mut cols = vec![0.0; k * hw];
        let mut grad_w = vec![0.0f64; self.weight.len()];
        let mut grad_b = vec![0.0f64; self.out_channels];
        let mut grad_x = vec![0.0f32; n * plane];
        for s in 0..n {
            let go = &grad_out.data()[s * out_plane..(s + 1) * out_plane];
            im2col_into(&cache.input.data()[s * plane..(s + 1) * plane], &g, &mut cols);
            // dW = dY · colsᵀ
            let gw = gemm(go, Transpose::No, &cols, Transpose::Yes, self.out_channels, hw, k);
            grad_w.iter_mut().zip(&gw).for_each(|(a, &v)| *a += v as f64);
            for (o, chunk) in go.chunks(hw).enumerate() {
                grad_b[o] += chunk.iter().map(|&v| v as f64).sum::<f64>();
            }
            // dcols = Wᵀ · dY
            let gcols = gemm(
                self.weight.data(),
                Transpose::Yes,
                go,
                Transpose::No,
                k,
                self.out_channels,
                hw,
            );
            col2im_into(&gcols, &g, &mut grad_x[s * plane..(s + 1) * plane]);
        }
        Ok(ConvGrads {
            input: Tensor::from_parts(cache.input.shape().to_vec(), grad_x),
            weight: Tensor::from_parts(
                self.weight.shape().to_vec(),
                grad_w.into_iter().map(|v| v as f32).collect(),
            ),
            bias: Tensor::from_parts(
                vec![self.out_channels],
                grad_b.into_iter().map(|v| v as f32).collect(),
            ),
        })
    }
}
