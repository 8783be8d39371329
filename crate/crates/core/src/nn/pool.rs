use super::{window_geometry, Padding};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Max pooling. Padded cells never win the max; ties go to the first cell in
/// row-major window order.
#[derive(Clone, Debug, PartialEq)]
pub struct MaxPool2d {
    pub window: (usize, usize),
    pub stride: usize,
    pub padding: Padding,
}

#[derive(Clone, Debug)]
pub struct MaxPoolCache {
    input_shape: Vec<usize>,
    output_shape: Vec<usize>,
    /// Flat input index of the winning cell for each output cell.
    argmax: Vec<usize>,
}

impl MaxPool2d {
    pub fn new(window: (usize, usize), stride: usize, padding: Padding) -> Result<Self> {
        if window.0 == 0 || window.1 == 0 || stride == 0 {
            return Err(Error::Config(format!(
                "max pool window {window:?} and stride {stride} must be positive"
            )));
        }
        Ok(MaxPool2d {
            window,
            stride,
            padding,
        })
    }

    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let pad = self.padding.resolve((h, w), self.window, self.stride);
        if pad.top >= self.window.0 || pad.left >= self.window.1 {
            return Err(Error::Config(format!(
                "padding {pad:?} would create windows with no input cells"
            )));
        }
        Ok(window_geometry(self.padding, (h, w), self.window, self.stride)?.1)
    }

    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, MaxPoolCache)> {
        let (n, c, h, w) = x.dims4()?;
        let (oh, ow) = self.output_hw(h, w)?;
        let pad = self.padding.resolve((h, w), self.window, self.stride);
        let mut out = Vec::with_capacity(n * c * oh * ow);
        let mut argmax = Vec::with_capacity(n * c * oh * ow);
        for plane in 0..n * c {
            let base = plane * h * w;
            for i in 0..oh {
                for j in 0..ow {
                    let mut best = f32::NEG_INFINITY;
                    let mut best_idx = usize::MAX;
                    for u in 0..self.window.0 {
                        let y = (i * self.stride + u) as isize - pad.top as isize;
                        if y < 0 || y >= h as isize {
                            continue;
                        }
                        for v in 0..self.window.1 {
                            let xx = (j * self.stride + v) as isize - pad.left as isize;
                            if xx < 0 || xx >= w as isize {
                                continue;
                            }
                            let idx = base + y as usize * w + xx as usize;
                            let val = x.data()[idx];
                            if best_idx == usize::MAX || val > best {
                                best = val;
                                best_idx = idx;
                            }
                        }
                    }
                    debug_assert!(best_idx != usize::MAX);
                    out.push(best);
                    argmax.push(best_idx);
                }
            }
        }
        let output_shape = vec![n, c, oh, ow];
        Ok((
            Tensor::from_parts(output_shape.clone(), out),
            MaxPoolCache {
                input_shape: x.shape().to_vec(),
                output_shape,
                argmax,
            },
        ))
    }

    /// Routes each output gradient to its cached argmax cell.
    pub fn backward(&self, cache: &MaxPoolCache, grad_out: &Tensor) -> Result<Tensor> {
        if grad_out.shape() != cache.output_shape.as_slice() {
            return Err(Error::Dimension(format!(
                "max pool gradient has shape {:?}, forward output was {:?}",
                grad_out.shape(),
                cache.output_shape
            )));
        }
        let mut dx = vec![0.0f32; cache.input_shape.iter().product()];
        for (&idx, &g) in cache.argmax.iter().zip(grad_out.data()) {
            dx[idx] += g;
        }
        Ok(Tensor::from_parts(cache.input_shape.clone(), dx))
    }
}
