#![allow(dead_code)]

//! Analytic backward passes against f64 central differences. Each check
//! panics on the first coordinate out of tolerance.

use gestalt_core::gestaltnet::{ArchitectureDescriptor, ArchitectureOptions, Network};
use gestalt_core::nn::{
    batch_softmax_cross_entropy, batchnorm_backward, batchnorm_forward, conv2d_backward, conv2d_forward, fc_backward,
    fc_forward, pool2d, pool2d_backward, relu, relu_backward, BatchNormParams, ConvGeometry, Mode, PoolGeometry,
    PoolKind, Tensor4,
};
use gestalt_core::rng::stream;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

const CASES: u64 = 20;
const H: f64 = 1e-6;
const REL_TOL: f64 = 1e-4;

fn random(shape: [usize; 4], rng: &mut ChaCha8Rng) -> Tensor4<f64> {
    let n = shape.iter().product();
    Tensor4::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / (a.abs() + n.abs()).max(1e-6)
}

fn dot(a: &Tensor4<f64>, b: &Tensor4<f64>) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

/// Central difference of `f` in coordinate `i` of `x`.
fn numeric(x: &mut [f64], i: usize, mut f: impl FnMut(&[f64]) -> f64) -> f64 {
    let orig = x[i];
    x[i] = orig + H;
    let up = f(x);
    x[i] = orig - H;
    let down = f(x);
    x[i] = orig;
    (up - down) / (2.0 * H)
}

fn assert_close(what: &str, case: u64, analytic: &[f64], x: &mut [f64], f: impl Fn(&[f64]) -> f64) {
    for i in 0..x.len() {
        let n = numeric(x, i, &f);
        let e = rel_err(analytic[i], n);
        assert!(e < REL_TOL, "{what} case {case} coord {i}: analytic {} numeric {n} rel {e}", analytic[i]);
    }
}

pub fn conv2d() {
    for case in 0..CASES {
        let mut rng = stream(case, &[1]);
        let kernel = [1, 3, 5][case as usize % 3];
        let geom = ConvGeometry {
            stride: 1 + (case as usize % 2),
            ..ConvGeometry::same(kernel)
        };
        let (n, c, co) = (2, 1 + case as usize % 3, 2);
        let x = random([n, c, 6, 5], &mut rng);
        let w = random([co, c, kernel, kernel], &mut rng);
        let b: Vec<f64> = (0..co).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y = conv2d_forward(&x, &w, &b, geom).unwrap();
        let r = random(y.shape(), &mut rng);
        let g = conv2d_backward(&x, &w, geom, &r).unwrap();

        let (xs, ws) = (x.shape(), w.shape());
        let loss_x = |v: &[f64]| dot(&conv2d_forward(&Tensor4::from_vec(xs, v.to_vec()).unwrap(), &w, &b, geom).unwrap(), &r);
        assert_close("conv input", case, g.input.data(), &mut x.data().to_vec(), loss_x);
        let loss_w = |v: &[f64]| dot(&conv2d_forward(&x, &Tensor4::from_vec(ws, v.to_vec()).unwrap(), &b, geom).unwrap(), &r);
        assert_close("conv weight", case, g.weight.data(), &mut w.data().to_vec(), loss_w);
        let loss_b = |v: &[f64]| dot(&conv2d_forward(&x, &w, v, geom).unwrap(), &r);
        assert_close("conv bias", case, &g.bias, &mut b.clone(), loss_b);
    }
}

pub fn dense() {
    for case in 0..CASES {
        let mut rng = stream(case, &[2]);
        let (n, f, o) = (1 + case as usize % 4, 3 + case as usize % 5, 2 + case as usize % 3);
        let x = random([n, f, 1, 1], &mut rng);
        let w: Vec<f64> = (0..o * f).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..o).map(|_| rng.random_range(-1.0..1.0)).collect();
        let r = random([n, o, 1, 1], &mut rng);
        let g = fc_backward(&x, &w, &r).unwrap();
        let xs = x.shape();
        let loss_x = |v: &[f64]| dot(&fc_forward(&Tensor4::from_vec(xs, v.to_vec()).unwrap(), &w, &b).unwrap(), &r);
        assert_close("dense input", case, g.input.data(), &mut x.data().to_vec(), loss_x);
        let loss_w = |v: &[f64]| dot(&fc_forward(&x, v, &b).unwrap(), &r);
        assert_close("dense weight", case, &g.weight, &mut w.clone(), loss_w);
        let loss_b = |v: &[f64]| dot(&fc_forward(&x, &w, v).unwrap(), &r);
        assert_close("dense bias", case, &g.bias, &mut b.clone(), loss_b);
    }
}

pub fn batchnorm_train_mode() {
    for case in 0..CASES {
        let mut rng = stream(case, &[3]);
        let shape = [2 + case as usize % 3, 1 + case as usize % 3, 3, 2];
        let x = random(shape, &mut rng);
        let c = shape[1];
        let mut p = BatchNormParams::new(c, 0.9, 1e-3);
        p.gamma = (0..c).map(|_| rng.random_range(0.5..1.5)).collect();
        p.beta = (0..c).map(|_| rng.random_range(-0.5..0.5)).collect();
        let (y, cache) = batchnorm_forward(&x, &mut p.clone(), Mode::Train).unwrap();
        let r = random(y.shape(), &mut rng);
        let g = batchnorm_backward(&cache.unwrap(), &p.gamma, &r).unwrap();
        let fwd = |x: &Tensor4<f64>, p: &BatchNormParams<f64>| {
            dot(&batchnorm_forward(x, &mut p.clone(), Mode::Train).unwrap().0, &r)
        };
        assert_close("bn input", case, g.input.data(), &mut x.data().to_vec(), |v| {
            fwd(&Tensor4::from_vec(shape, v.to_vec()).unwrap(), &p)
        });
        assert_close("bn gamma", case, &g.gamma, &mut p.gamma.clone(), |v| {
            fwd(&x, &BatchNormParams { gamma: v.to_vec(), ..p.clone() })
        });
        assert_close("bn beta", case, &g.beta, &mut p.beta.clone(), |v| {
            fwd(&x, &BatchNormParams { beta: v.to_vec(), ..p.clone() })
        });
    }
}

pub fn pooling() {
    for case in 0..CASES {
        let mut rng = stream(case, &[4]);
        let kind = if case % 2 == 0 { PoolKind::Max } else { PoolKind::Avg };
        let geom = PoolGeometry { window: 2, stride: 2 };
        let shape = [2, 2, 4 + case as usize % 3, 4];
        let x = random(shape, &mut rng);
        let (y, cache) = pool2d(&x, kind, geom).unwrap();
        let r = random(y.shape(), &mut rng);
        let g = pool2d_backward(&cache, kind, geom, &r).unwrap();
        assert_close("pool input", case, g.data(), &mut x.data().to_vec(), |v| {
            dot(&pool2d(&Tensor4::from_vec(shape, v.to_vec()).unwrap(), kind, geom).unwrap().0, &r)
        });
    }
}

pub fn relu_away_from_kink() {
    for case in 0..CASES {
        let mut rng = stream(case, &[5]);
        let shape = [2, 3, 3, 3];
        let mut x = random(shape, &mut rng);
        for v in x.data_mut() {
            if v.abs() < 1e-3 {
                *v += 0.01;
            }
        }
        let y = relu(&x);
        let r = random(shape, &mut rng);
        let g = relu_backward(&y, &r);
        assert_close("relu input", case, g.data(), &mut x.data().to_vec(), |v| {
            dot(&relu(&Tensor4::from_vec(shape, v.to_vec()).unwrap()), &r)
        });
    }
}

pub fn weighted_cross_entropy() {
    for case in 0..CASES {
        let mut rng = stream(case, &[6]);
        let (n, c) = (1 + case as usize % 4, 2 + case as usize % 5);
        let x = random([n, c, 1, 1], &mut rng).map(|v| 3.0 * v);
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..c)).collect();
        let weights: Vec<f64> = (0..c).map(|_| rng.random_range(0.5..2.0)).collect();
        let w = (case % 2 == 0).then_some(weights.as_slice());
        let (_, g) = batch_softmax_cross_entropy(&x, &labels, w).unwrap();
        let mut v = x.data().to_vec();
        for i in 0..v.len() {
            let num = numeric(&mut v, i, |v| {
                batch_softmax_cross_entropy(&Tensor4::from_vec([n, c, 1, 1], v.to_vec()).unwrap(), &labels, w)
                    .unwrap()
                    .0
            });
            assert!((g.data()[i] - num).abs() < 1e-6, "loss case {case} coord {i}");
        }
    }
}

fn tiny_net(seed: u64) -> Network<f64> {
    let options = ArchitectureOptions {
        channels: [2, 2, 3, 3, 3, 3, 4, 4, 4, 4],
        input_side: 16,
        dropout: 0.0,
        ..ArchitectureOptions::default()
    };
    Network::new(ArchitectureDescriptor::gestalt(&options, 3).unwrap(), seed).unwrap()
}

pub fn whole_network() {
    for case in 0..CASES {
        let mut rng = stream(case, &[7]);
        let mut net = tiny_net(case);
        let x = random([3, 1, 16, 16], &mut rng);
        let labels = [0, 1, 2];
        let loss = |net: &mut Network<f64>| {
            let (logits, _) = net.forward_train(&x, &mut stream(0, &[])).unwrap();
            batch_softmax_cross_entropy(&logits, &labels, None).unwrap().0
        };
        let (logits, trace) = net.forward_train(&x, &mut stream(0, &[])).unwrap();
        let (_, grad) = batch_softmax_cross_entropy(&logits, &labels, None).unwrap();
        let (grads, _) = net.backward(trace, &grad).unwrap();
        // Probe a few coordinates of every parameter tensor.
        for (t, g) in grads.iter().enumerate() {
            for i in [0, g.len() / 2, g.len() - 1] {
                let mut probe = net.clone();
                let orig = probe.params()[t][i];
                probe.params_mut()[t][i] = orig + H;
                let up = loss(&mut probe);
                probe.params_mut()[t][i] = orig - H;
                let down = loss(&mut probe);
                let num = (up - down) / (2.0 * H);
                let e = (g[i] - num).abs() / (g[i].abs() + num.abs()).max(1e-4);
                assert!(e < REL_TOL, "net case {case} tensor {t} coord {i}: analytic {} numeric {num}", g[i]);
            }
        }
    }
}
