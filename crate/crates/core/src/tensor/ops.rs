use super::Tensor;
use crate::error::{Error, Result};

/// Whether a `gemm` operand is read as stored or transposed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Transpose {
    No,
    Yes,
}

/// `op(a) · op(b)` where `op(a)` is `m×k` and `op(b)` is `k×n`.
///
/// `a` is stored `m×k` (or `k×m` when transposed), `b` is stored `k×n`
/// (or `n×k`). Products are accumulated in `f64` and rounded once.
pub fn gemm(
    a: &[f32],
    ta: Transpose,
    b: &[f32],
    tb: Transpose,
    m: usize,
    k: usize,
    n: usize,
) -> Vec<f32> {
    assert_eq!(a.len(), m * k, "gemm: lhs length");
    assert_eq!(b.len(), k * n, "gemm: rhs length");
    let mut out = vec![0.0f32; m * n];
    match (ta, tb) {
        (Transpose::No, Transpose::No) => {
            let mut acc = vec![0.0f64; n];
            for i in 0..m {
                acc.iter_mut().for_each(|v| *v = 0.0);
                let arow = &a[i * k..(i + 1) * k];
                for (p, &aip) in arow.iter().enumerate() {
                    if aip == 0.0 {
                        continue;
                    }
                    let aip = aip as f64;
                    let brow = &b[p * n..(p + 1) * n];
                    for (s, &bv) in acc.iter_mut().zip(brow) {
                        *s += aip * bv as f64;
                    }
                }
                for (o, &s) in out[i * n..(i + 1) * n].iter_mut().zip(&acc) {
                    *o = s as f32;
                }
            }
        }
        (Transpose::No, Transpose::Yes) => {
            for i in 0..m {
                let arow = &a[i * k..(i + 1) * k];
                for j in 0..n {
                    let brow = &b[j * k..(j + 1) * k];
                    let s: f64 = arow
                        .iter()
                        .zip(brow)
                        .map(|(&x, &y)| x as f64 * y as f64)
                        .sum();
                    out[i * n + j] = s as f32;
                }
            }
        }
        (Transpose::Yes, Transpose::No) => {
            let mut acc = vec![0.0f64; m * n];
            for p in 0..k {
                let acol = &a[p * m..(p + 1) * m];
                let brow = &b[p * n..(p + 1) * n];
                for (i, &api) in acol.iter().enumerate() {
                    if api == 0.0 {
                        continue;
                    }
                    let api = api as f64;
                    for (s, &bv) in acc[i * n..(i + 1) * n].iter_mut().zip(brow) {
                        *s += api * bv as f64;
                    }
                }
            }
            for (o, s) in out.iter_mut().zip(acc) {
                *o = s as f32;
            }
        }
        (Transpose::Yes, Transpose::Yes) => {
            for i in 0..m {
                for j in 0..n {
                    let mut s = 0.0f64;
                    for p in 0..k {
                        s += a[p * m + i] as f64 * b[j * k + p] as f64;
                    }
                    out[i * n + j] = s as f32;
                }
            }
        }
    }
    out
}

/// Matrix product of an `m×k` and a `k×n` tensor.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = a.dims2()?;
    let (k2, n) = b.dims2()?;
    if k != k2 {
        return Err(Error::Dimension(format!(
            "matmul inner extents disagree: {:?} × {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let out = gemm(a.data(), Transpose::No, b.data(), Transpose::No, m, k, n);
    Ok(Tensor::from_parts(vec![m, n], out))
}

/// Zero padding applied to each spatial border.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Pad2d {
    pub top: usize,
    pub bottom: usize,
    pub left: usize,
    pub right: usize,
}

impl Pad2d {
    pub fn uniform(p: usize) -> Self {
        Pad2d {
            top: p,
            bottom: p,
            left: p,
            right: p,
        }
    }

    /// Output extents of a `kh×kw` window sliding over an `h×w` plane.
    pub fn output_extent(
        &self,
        (h, w): (usize, usize),
        (kh, kw): (usize, usize),
        stride: usize,
    ) -> Result<(usize, usize)> {
        if kh == 0 || kw == 0 || stride == 0 {
            return Err(Error::Config(format!(
                "kernel {kh}×{kw} and stride {stride} must be positive"
            )));
        }
        let ph = h + self.top + self.bottom;
        let pw = w + self.left + self.right;
        if kh > ph || kw > pw {
            return Err(Error::Config(format!(
                "window {kh}×{kw} larger than padded input {ph}×{pw}"
            )));
        }
        if !(ph - kh).is_multiple_of(stride) || !(pw - kw).is_multiple_of(stride) {
            return Err(Error::Config(format!(
                "window {kh}×{kw} at stride {stride} does not tile padded input {ph}×{pw}"
            )));
        }
        Ok(((ph - kh) / stride + 1, (pw - kw) / stride + 1))
    }
}

pub(crate) struct ConvGeometry {
    pub channels: usize,
    pub h: usize,
    pub w: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: Pad2d,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeometry {
    pub fn rows(&self) -> usize {
        self.channels * self.kh * self.kw
    }

    pub fn cols(&self) -> usize {
        self.out_h * self.out_w
    }
}

/// Fills `cols` (`rows × cols`, row-major) with the receptive fields of one
/// `C×H×W` image.
pub(crate) fn im2col_into(src: &[f32], g: &ConvGeometry, cols: &mut [f32]) {
    let ncols = g.cols();
    for c in 0..g.channels {
        let plane = &src[c * g.h * g.w..(c + 1) * g.h * g.w];
        for u in 0..g.kh {
            for v in 0..g.kw {
                let row = (c * g.kh + u) * g.kw + v;
                let dst = &mut cols[row * ncols..(row + 1) * ncols];
                for i in 0..g.out_h {
                    let y = (i * g.stride + u) as isize - g.pad.top as isize;
                    let line = &mut dst[i * g.out_w..(i + 1) * g.out_w];
                    if y < 0 || y >= g.h as isize {
                        line.iter_mut().for_each(|d| *d = 0.0);
                        continue;
                    }
                    let srow = &plane[y as usize * g.w..(y as usize + 1) * g.w];
                    for (j, d) in line.iter_mut().enumerate() {
                        let x = (j * g.stride + v) as isize - g.pad.left as isize;
                        *d = if x < 0 || x >= g.w as isize {
                            0.0
                        } else {
                            srow[x as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col_into`]: scatters columns back onto a zeroed image,
/// summing overlapping contributions.
pub(crate) fn col2im_into(cols: &[f32], g: &ConvGeometry, dst: &mut [f32]) {
    let ncols = g.cols();
    for c in 0..g.channels {
        let plane = &mut dst[c * g.h * g.w..(c + 1) * g.h * g.w];
        for u in 0..g.kh {
            for v in 0..g.kw {
                let row = (c * g.kh + u) * g.kw + v;
                let src = &cols[row * ncols..(row + 1) * ncols];
                for i in 0..g.out_h {
                    let y = (i * g.stride + u) as isize - g.pad.top as isize;
                    if y < 0 || y >= g.h as isize {
                        continue;
                    }
                    for j in 0..g.out_w {
                        let x = (j * g.stride + v) as isize - g.pad.left as isize;
                        if x >= 0 && x < g.w as isize {
                            plane[y as usize * g.w + x as usize] += src[i * g.out_w + j];
                        }
                    }
                }
            }
        }
    }
}

fn geometry(
    shape: &[usize],
    kernel: (usize, usize),
    stride: usize,
    pad: Pad2d,
) -> Result<ConvGeometry> {
    let [channels, h, w] = shape[..] else {
        return Err(Error::Dimension(format!(
            "expected a C×H×W image, got shape {shape:?}"
        )));
    };
    let (out_h, out_w) = pad.output_extent((h, w), kernel, stride)?;
    Ok(ConvGeometry {
        channels,
        h,
        w,
        kh: kernel.0,
        kw: kernel.1,
        stride,
        pad,
        out_h,
        out_w,
    })
}

/// Lowers a `C×H×W` image into a `(C·kh·kw) × (H'·W')` matrix whose columns
/// are the zero-padded receptive fields, in row-major output order.
pub fn im2col(x: &Tensor, kernel: (usize, usize), stride: usize, pad: Pad2d) -> Result<Tensor> {
    let g = geometry(x.shape(), kernel, stride, pad)?;
    let mut cols = vec![0.0; g.rows() * g.cols()];
    im2col_into(x.data(), &g, &mut cols);
    Ok(Tensor::from_parts(vec![g.rows(), g.cols()], cols))
}

/// Adjoint of [`im2col`] for an image of shape `image_shape` (`C×H×W`).
pub fn col2im(
    cols: &Tensor,
    image_shape: [usize; 3],
    kernel: (usize, usize),
    stride: usize,
    pad: Pad2d,
) -> Result<Tensor> {
    let g = geometry(&image_shape, kernel, stride, pad)?;
    if cols.shape() != [g.rows(), g.cols()] {
        return Err(Error::Dimension(format!(
            "column matrix {:?} does not match geometry {}×{}",
            cols.shape(),
            g.rows(),
            g.cols()
        )));
    }
    let mut img = vec![0.0; image_shape.iter().product()];
    col2im_into(cols.data(), &g, &mut img);
    Ok(Tensor::from_parts(image_shape.to_vec(), img))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Reduction {
    Sum,
    Max,
    Mean,
}

/// Reduces `x` over `axes`, dropping them from the shape. Reducing every
/// axis yields shape `[1]`.
pub fn reduce(x: &Tensor, op: Reduction, axes: &[usize]) -> Result<Tensor> {
    if axes.is_empty() {
        return Err(Error::Domain("reduction over an empty axis set".into()));
    }
    let rank = x.rank();
    let mut reduced = vec![false; rank];
    for &a in axes {
        if a >= rank || reduced[a] {
            return Err(Error::Dimension(format!(
                "invalid reduction axes {axes:?} for shape {:?}",
                x.shape()
            )));
        }
        reduced[a] = true;
    }
    let kept: Vec<usize> = (0..rank).filter(|&a| !reduced[a]).collect();
    let out_shape: Vec<usize> = if kept.is_empty() {
        vec![1]
    } else {
        kept.iter().map(|&a| x.shape()[a]).collect()
    };
    let out_len: usize = out_shape.iter().product();
    let count: usize = axes.iter().map(|&a| x.shape()[a]).product();

    // Output stride for each input axis (zero for reduced axes).
    let mut out_stride = vec![0usize; rank];
    let mut s = 1;
    for &a in kept.iter().rev() {
        out_stride[a] = s;
        s *= x.shape()[a];
    }

    let init = match op {
        Reduction::Max => f64::NEG_INFINITY,
        _ => 0.0,
    };
    let mut acc = vec![init; out_len];
    let mut index = vec![0usize; rank];
    for &v in x.data() {
        let o: usize = index.iter().zip(&out_stride).map(|(i, s)| i * s).sum();
        match op {
            Reduction::Max => acc[o] = acc[o].max(v as f64),
            _ => acc[o] += v as f64,
        }
        for a in (0..rank).rev() {
            index[a] += 1;
            if index[a] < x.shape()[a] {
                break;
            }
            index[a] = 0;
        }
    }
    if op == Reduction::Mean {
        acc.iter_mut().for_each(|v| *v /= count as f64);
    }
    Ok(Tensor::from_parts(
        out_shape,
        acc.into_iter().map(|v| v as f32).collect(),
    ))
}
