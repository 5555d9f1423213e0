use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{Scalar, Tensor4};
use crate::error::{GestaltError, Result};

pub use super::batchnorm::Mode;

pub fn relu<T: Scalar>(input: &Tensor4<T>) -> Tensor4<T> {
    input.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Gradient of ReLU given its *output*; the subgradient at 0 is 0.
pub fn relu_backward<T: Scalar>(output: &Tensor4<T>, grad_out: &Tensor4<T>) -> Tensor4<T> {
    let mut g = grad_out.clone();
    for (d, &y) in g.data_mut().iter_mut().zip(output.data()) {
        if y <= T::zero() {
            *d = T::zero();
        }
    }
    g
}

/// Inverted dropout: survivors are scaled by `1 / (1 - rate)` so inference
/// is the identity. Returns the output and the per-element multiplier.
pub fn dropout<T: Scalar>(
    input: &Tensor4<T>,
    rate: f64,
    mode: Mode,
    rng: &mut ChaCha8Rng,
) -> Result<(Tensor4<T>, Option<Vec<T>>)> {
    if !(0.0..1.0).contains(&rate) {
        return Err(GestaltError::InvalidArgument(format!(
            "dropout rate {rate} outside [0, 1)"
        )));
    }
    if mode == Mode::Infer || rate == 0.0 {
        return Ok((input.clone(), None));
    }
    let keep = T::from_f64_lossy(1.0 / (1.0 - rate));
    let mask: Vec<T> = (0..input.data().len())
        .map(|_| if rng.random::<f64>() < rate { T::zero() } else { keep })
        .collect();
    let mut out = input.clone();
    for (o, m) in out.data_mut().iter_mut().zip(&mask) {
        *o *= *m;
    }
    Ok((out, Some(mask)))
}

pub fn dropout_backward<T: Scalar>(mask: Option<&[T]>, grad_out: &Tensor4<T>) -> Tensor4<T> {
    let mut g = grad_out.clone();
    if let Some(mask) = mask {
        for (d, m) in g.data_mut().iter_mut().zip(mask) {
            *d *= *m;
        }
    }
    g
}

/// Row-wise softmax computed in `f64`.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}
