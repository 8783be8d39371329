use crate::error::{Error, Result};
use crate::model::NUM_CLASSES;
use crate::tensor::Tensor;

/// Added to probabilities inside the log so saturated outputs stay finite.
pub const LOG_CLAMP: f64 = 1e-12;

/// Mean categorical cross-entropy of `probs` (`N×K`) against class indices,
/// with the fused softmax + cross-entropy gradient `(probs − onehot) / N`
/// with respect to the logits.
pub fn cross_entropy(probs: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    let (n, k) = probs.dims2()?;
    if labels.len() != n {
        return Err(Error::Dimension(format!(
            "{} labels for {n} predictions",
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::Domain(format!(
            "label {bad} out of range for {k} classes"
        )));
    }
    let mut loss = 0.0f64;
    let mut grad = probs.data().to_vec();
    for (i, &label) in labels.iter().enumerate() {
        loss -= (probs.data()[i * k + label] as f64 + LOG_CLAMP).ln();
        grad[i * k + label] -= 1.0;
    }
    let inv_n = 1.0 / n as f32;
    grad.iter_mut().for_each(|g| *g *= inv_n);
    Ok((loss / n as f64, Tensor::new([n, k], grad)?))
}

/// Index of the largest probability per row; ties go to the lowest index.
pub fn argmax_rows(probs: &Tensor) -> Result<Vec<usize>> {
    let (_, k) = probs.dims2()?;
    Ok(probs
        .data()
        .chunks(k)
        .map(|row| {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate().skip(1) {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect())
}

pub(crate) fn check_labels(labels: &[usize]) -> Result<()> {
    match labels.iter().find(|&&l| l >= NUM_CLASSES) {
        Some(l) => Err(Error::Domain(format!("label {l} out of range"))),
        None => Ok(()),
    }
}
