use super::{Scalar, Tensor4};
use crate::error::{GestaltError, Result};

/// Softmax cross-entropy for one logit row.
///
/// Uses log-sum-exp with max subtraction. The gradient is
/// `softmax(logits) - one_hot(label)`.
pub fn softmax_cross_entropy<T: Scalar>(logits: &[T], label: usize) -> Result<(T, Vec<T>)> {
    if label >= logits.len() {
        return Err(GestaltError::InvalidLabel {
            label,
            classes: logits.len(),
        });
    }
    let max = logits.iter().cloned().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = logits.iter().map(|&z| (z - max).exp()).collect();
    let total = exps.iter().fold(T::zero(), |a, &e| a + e);
    let log_z = max + total.ln();
    let loss = log_z - logits[label];
    let mut grad: Vec<T> = exps.into_iter().map(|e| e / total).collect();
    grad[label] -= T::one();
    Ok((loss, grad))
}

/// Mean (optionally class-weighted) loss over a batch of logits
/// `(batch, classes, 1, 1)`, with the gradient of that mean.
pub fn batch_softmax_cross_entropy<T: Scalar>(
    logits: &Tensor4<T>,
    labels: &[usize],
    class_weights: Option<&[f64]>,
) -> Result<(T, Tensor4<T>)> {
    let n = logits.batch();
    let c = logits.item_len();
    if labels.len() != n {
        return Err(GestaltError::LengthMismatch {
            left: labels.len(),
            right: n,
        });
    }
    if let Some(w) = class_weights {
        if w.len() != c {
            return Err(GestaltError::LengthMismatch { left: w.len(), right: c });
        }
    }
    let mut grad = Tensor4::zeros(logits.shape());
    let mut total = T::zero();
    let inv_n = T::one() / T::from_usize(n.max(1)).unwrap();
    for (i, &label) in labels.iter().enumerate() {
        let (l, g) = softmax_cross_entropy(logits.item(i), label)?;
        let w = class_weights.map_or(T::one(), |w| T::from_f64_lossy(w[label]));
        total += w * l;
        for (d, gv) in grad.item_mut(i).iter_mut().zip(g) {
            *d = w * gv * inv_n;
        }
    }
    Ok((total * inv_n, grad))
}
