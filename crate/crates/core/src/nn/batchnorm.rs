//! Spatial batch normalization over `(batch, height, width)` per channel.

use super::{Scalar, Tensor4};
use crate::error::{GestaltError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// Learned affine parameters plus running statistics for one channel set.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormParams<T> {
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    /// Fraction of the running statistic retained per update.
    pub momentum: T,
    pub epsilon: T,
}

impl<T: Scalar> BatchNormParams<T> {
    pub fn new(channels: usize, momentum: T, epsilon: T) -> Self {
        Self {
            gamma: vec![T::one(); channels],
            beta: vec![T::zero(); channels],
            running_mean: vec![T::zero(); channels],
            running_var: vec![T::one(); channels],
            momentum,
            epsilon,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }
}

/// Values saved by a train-mode forward pass for the backward pass.
#[derive(Debug, Clone)]
pub struct BatchNormCache<T> {
    x_hat: Tensor4<T>,
    inv_std: Vec<T>,
}

pub struct BatchNormGrads<T> {
    pub input: Tensor4<T>,
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
}

fn channel_slices<T: Scalar>(t: &Tensor4<T>, c: usize) -> impl Iterator<Item = &[T]> {
    let [n, cs, h, w] = t.shape();
    let plane = h * w;
    (0..n).map(move |b| &t.data()[(b * cs + c) * plane..(b * cs + c + 1) * plane])
}

/// Train mode normalizes with batch statistics and folds them into the
/// running averages; infer mode uses the running averages only and returns
/// no cache.
pub fn batchnorm_forward<T: Scalar>(
    input: &Tensor4<T>,
    params: &mut BatchNormParams<T>,
    mode: Mode,
) -> Result<(Tensor4<T>, Option<BatchNormCache<T>>)> {
    let [n, c, h, w] = input.shape();
    if c != params.channels() {
        return Err(GestaltError::ShapeMismatch(format!(
            "batch norm over {} channels applied to {c}",
            params.channels()
        )));
    }
    let plane = h * w;
    let mut out = Tensor4::zeros(input.shape());
    match mode {
        Mode::Infer => {
            for ch in 0..c {
                let inv = T::one() / (params.running_var[ch] + params.epsilon).sqrt();
                let scale = params.gamma[ch] * inv;
                let shift = params.beta[ch] - params.running_mean[ch] * scale;
                for b in 0..n {
                    let off = (b * c + ch) * plane;
                    for i in off..off + plane {
                        out.data_mut()[i] = input.data()[i] * scale + shift;
                    }
                }
            }
            out.debug_check("batchnorm_forward(infer)");
            Ok((out, None))
        }
        Mode::Train => {
            if n < 2 {
                return Err(GestaltError::DegenerateBatch(n));
            }
            let count = T::from_usize(n * plane).unwrap();
            let mut x_hat = Tensor4::zeros(input.shape());
            let mut inv_std = vec![T::zero(); c];
            for ch in 0..c {
                let sum = channel_slices(input, ch)
                    .flat_map(|s| s.iter())
                    .fold(T::zero(), |a, &v| a + v);
                let mean = sum / count;
                let sq = channel_slices(input, ch)
                    .flat_map(|s| s.iter())
                    .fold(T::zero(), |a, &v| a + (v - mean) * (v - mean));
                let var = sq / count;
                let inv = T::one() / (var + params.epsilon).sqrt();
                inv_std[ch] = inv;
                for b in 0..n {
                    let off = (b * c + ch) * plane;
                    for i in off..off + plane {
                        let xh = (input.data()[i] - mean) * inv;
                        x_hat.data_mut()[i] = xh;
                        out.data_mut()[i] = params.gamma[ch] * xh + params.beta[ch];
                    }
                }
                let unbiased = sq / (count - T::one());
                let m = params.momentum;
                params.running_mean[ch] = m * params.running_mean[ch] + (T::one() - m) * mean;
                params.running_var[ch] = m * params.running_var[ch] + (T::one() - m) * unbiased;
            }
            out.debug_check("batchnorm_forward(train)");
            Ok((out, Some(BatchNormCache { x_hat, inv_std })))
        }
    }
}

pub fn batchnorm_backward<T: Scalar>(
    cache: &BatchNormCache<T>,
    gamma: &[T],
    grad_out: &Tensor4<T>,
) -> Result<BatchNormGrads<T>> {
    if grad_out.shape() != cache.x_hat.shape() {
        return Err(GestaltError::ShapeMismatch(format!(
            "batch norm grad {:?} vs cached {:?}",
            grad_out.shape(),
            cache.x_hat.shape()
        )));
    }
    let [n, c, h, w] = grad_out.shape();
    let plane = h * w;
    let count = T::from_usize(n * plane).unwrap();
    let mut d_input = Tensor4::zeros(grad_out.shape());
    let mut d_gamma = vec![T::zero(); c];
    let mut d_beta = vec![T::zero(); c];
    for ch in 0..c {
        let mut sum_dy = T::zero();
        let mut sum_dy_xh = T::zero();
        for b in 0..n {
            let off = (b * c + ch) * plane;
            for i in off..off + plane {
                let dy = grad_out.data()[i];
                sum_dy += dy;
                sum_dy_xh += dy * cache.x_hat.data()[i];
            }
        }
        d_beta[ch] = sum_dy;
        d_gamma[ch] = sum_dy_xh;
        let k = gamma[ch] * cache.inv_std[ch] / count;
        for b in 0..n {
            let off = (b * c + ch) * plane;
            for i in off..off + plane {
                let dy = grad_out.data()[i];
                d_input.data_mut()[i] =
                    k * (count * dy - sum_dy - cache.x_hat.data()[i] * sum_dy_xh);
            }
        }
    }
    Ok(BatchNormGrads {
        input: d_input,
        gamma: d_gamma,
        beta: d_beta,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_channel_maps_to_beta() {
        let input = Tensor4::from_vec([3, 1, 2, 2], vec![4.2; 12]).unwrap();
        let mut p = BatchNormParams::new(1, 0.9, 1e-5);
        p.beta[0] = 0.7;
        p.gamma[0] = 3.0;
        let (out, _) = batchnorm_forward(&input, &mut p, Mode::Train).unwrap();
        assert!(out.data().iter().all(|&v| (v - 0.7f64).abs() < 1e-12));
    }

    #[test]
    fn standardized_batch_is_nearly_unchanged() {
        // zero mean, unit (biased) variance
        let input = Tensor4::from_vec([2, 1, 1, 2], vec![1.0f64, -1.0, 1.0, -1.0]).unwrap();
        let mut p = BatchNormParams::new(1, 0.9, 1e-5);
        let (out, _) = batchnorm_forward(&input, &mut p, Mode::Train).unwrap();
        for (o, i) in out.data().iter().zip(input.data()) {
            assert!((o - i).abs() < 1e-5);
        }
    }

    #[test]
    fn train_mode_rejects_single_sample_and_updates_running_stats() {
        let single = Tensor4::<f64>::zeros([1, 2, 3, 3]);
        let mut p = BatchNormParams::new(2, 0.9, 1e-5);
        assert!(matches!(
            batchnorm_forward(&single, &mut p, Mode::Train),
            Err(GestaltError::DegenerateBatch(1))
        ));
        let input = Tensor4::from_vec([2, 1, 1, 1], vec![1.0f64, 3.0]).unwrap();
        let mut p = BatchNormParams::new(1, 0.5, 1e-5);
        batchnorm_forward(&input, &mut p, Mode::Train).unwrap();
        assert!((p.running_mean[0] - 1.0).abs() < 1e-12);
        // unbiased var = 2, 0.5 * 1 + 0.5 * 2
        assert!((p.running_var[0] - 1.5).abs() < 1e-12);
    }

    #[test]
    fn infer_mode_is_affine_in_input() {
        let mut p = BatchNormParams::<f64>::new(1, 0.9, 1e-3);
        p.running_mean[0] = 0.5;
        p.running_var[0] = 4.0;
        p.gamma[0] = 2.0;
        p.beta[0] = -1.0;
        let x = Tensor4::from_vec([1, 1, 1, 3], vec![0.0, 1.0, 2.0]).unwrap();
        let (y, cache) = batchnorm_forward(&x, &mut p, Mode::Infer).unwrap();
        assert!(cache.is_none());
        let d1 = y.data()[1] - y.data()[0];
        let d2 = y.data()[2] - y.data()[1];
        assert!((d1 - d2).abs() < 1e-12);
        assert!((d1 - 2.0 / (4.0f64 + 1e-3).sqrt()).abs() < 1e-12);
    }
}
