use crate::error::Result;
use crate::tensor::Tensor;

pub fn relu(x: &Tensor) -> Tensor {
    x.map(|v| v.max(0.0))
}

/// Passes `grad_out` where the forward input was positive. The subgradient
/// at zero is zero.
pub fn relu_backward(input: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
    input.zip_map(grad_out, |x, g| if x > 0.0 { g } else { 0.0 })
}

/// Row-wise softmax of `N×K` logits with max subtraction.
pub fn softmax(logits: &Tensor) -> Result<Tensor> {
    let (_, k) = logits.dims2()?;
    let mut out = Vec::with_capacity(logits.len());
    for row in logits.data().chunks(k) {
        let max = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max) as f64;
        let exps: Vec<f64> = row.iter().map(|&v| (v as f64 - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        out.extend(exps.iter().map(|e| (e / z) as f32));
    }
    Ok(Tensor::from_parts(logits.shape().to_vec(), out))
}

/// Vector-Jacobian product of softmax: `p ⊙ (g − Σ g·p)` per row.
pub fn softmax_backward(probs: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
    probs.expect_same_shape(grad_out)?;
    let (_, k) = probs.dims2()?;
    let mut out = Vec::with_capacity(probs.len());
    for (p, g) in probs.data().chunks(k).zip(grad_out.data().chunks(k)) {
        let s: f64 = p.iter().zip(g).map(|(&p, &g)| p as f64 * g as f64).sum();
        out.extend(p.iter().zip(g).map(|(&p, &g)| (p as f64 * (g as f64 - s)) as f32));
    }
    Ok(Tensor::from_parts(probs.shape().to_vec(), out))
}
