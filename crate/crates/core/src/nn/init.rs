use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{Scalar, Tensor4};

/// Fan-in and fan-out of a weight tensor: `(out, in, kh, kw)` for
/// convolutions, `(out, in, 1, 1)` for dense layers.
pub fn fans(shape: [usize; 4]) -> (usize, usize) {
    let receptive = shape[2] * shape[3];
    (shape[1] * receptive, shape[0] * receptive)
}

fn normal<T: Scalar>(shape: [usize; 4], variance: f64, seed: u64) -> Tensor4<T> {
    let n: usize = shape.iter().product();
    if variance == 0.0 {
        return Tensor4::zeros(shape);
    }
    let dist = Normal::new(0.0, variance.sqrt()).expect("positive variance");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..n)
        .map(|_| T::from_f64_lossy(dist.sample(&mut rng)))
        .collect();
    Tensor4::from_vec(shape, data).expect("length matches shape")
}

/// Zero-mean normal with variance `2 / fan_in`.
pub fn init_he_normal<T: Scalar>(shape: [usize; 4], seed: u64) -> Tensor4<T> {
    let (fan_in, _) = fans(shape);
    normal(shape, 2.0 / fan_in as f64, seed)
}

/// Zero-mean normal with variance `scale * 2 / (fan_in + fan_out)`.
/// `scale = 1` is the usual Xavier/Glorot normal.
pub fn init_xavier_modified<T: Scalar>(shape: [usize; 4], scale: f64, seed: u64) -> Tensor4<T> {
    let (fan_in, fan_out) = fans(shape);
    normal(shape, scale * 2.0 / (fan_in + fan_out) as f64, seed)
}

pub const FINETUNE_HEAD_SCALE: f64 = 0.3;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn he_sample_variance_within_five_percent() {
        // 196 outputs x 512 inputs = 100_352 draws
        let t: Tensor4<f64> = init_he_normal([196, 512, 1, 1], 11);
        let n = t.data().len() as f64;
        let mean = t.data().iter().sum::<f64>() / n;
        let var = t.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let expect = 2.0 / 512.0;
        assert!(((var - expect) / expect).abs() < 0.05, "var {var}");
        assert!(mean.abs() < 4.0 * (expect / n).sqrt());
    }

    #[test]
    fn zero_scale_xavier_is_zero_and_seeds_are_stable() {
        let z: Tensor4<f32> = init_xavier_modified([5, 160, 1, 1], 0.0, 9);
        assert!(z.data().iter().all(|&v| v == 0.0));
        let a: Tensor4<f32> = init_xavier_modified([5, 160, 1, 1], 0.3, 9);
        let b: Tensor4<f32> = init_xavier_modified([5, 160, 1, 1], 0.3, 9);
        assert_eq!(a, b);
        let c: Tensor4<f32> = init_he_normal([4, 2, 3, 3], 1);
        let d: Tensor4<f32> = init_he_normal([4, 2, 3, 3], 1);
        assert_eq!(c, d);
    }

    #[test]
    fn conv_fans_include_receptive_field() {
        assert_eq!(fans([32, 16, 3, 3]), (144, 288));
    }
}
