use serde::{Deserialize, Serialize};

use super::{Scalar, Tensor4};
use crate::error::{GestaltError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolKind {
    Max,
    Avg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolGeometry {
    pub window: usize,
    pub stride: usize,
}

/// Argmax positions (flat index into the input) for max pooling.
#[derive(Debug, Clone)]
pub struct PoolCache {
    input_shape: [usize; 4],
    argmax: Vec<usize>,
}

fn out_dims(
    input: [usize; 4],
    window: (usize, usize),
    stride: (usize, usize),
) -> Result<(usize, usize)> {
    let [_, _, h, w] = input;
    let (wh, ww) = window;
    if wh == 0 || ww == 0 || stride.0 == 0 || stride.1 == 0 || wh > h || ww > w {
        return Err(GestaltError::ShapeMismatch(format!(
            "pool window {wh}x{ww} does not fit input {input:?}"
        )));
    }
    Ok(((h - wh) / stride.0 + 1, (w - ww) / stride.1 + 1))
}

/// Pools with a possibly rectangular window; `pool2d` is the square case.
pub fn pool2d_rect<T: Scalar>(
    input: &Tensor4<T>,
    kind: PoolKind,
    window: (usize, usize),
    stride: (usize, usize),
) -> Result<(Tensor4<T>, PoolCache)> {
    let shape = input.shape();
    let [n, c, h, w] = shape;
    let (ho, wo) = out_dims(shape, window, stride)?;
    let mut out = Tensor4::zeros([n, c, ho, wo]);
    let mut argmax = Vec::new();
    if kind == PoolKind::Max {
        argmax.reserve(n * c * ho * wo);
    }
    let area = T::from_usize(window.0 * window.1).unwrap();
    let mut o = 0;
    for plane_idx in 0..n * c {
        let base = plane_idx * h * w;
        let plane = &input.data()[base..base + h * w];
        for oy in 0..ho {
            for ox in 0..wo {
                let (y0, x0) = (oy * stride.0, ox * stride.1);
                match kind {
                    PoolKind::Max => {
                        let mut best = plane[y0 * w + x0];
                        let mut best_i = y0 * w + x0;
                        for y in y0..y0 + window.0 {
                            for x in x0..x0 + window.1 {
                                let v = plane[y * w + x];
                                // strict comparison keeps the first row-major maximum
                                if v > best {
                                    best = v;
                                    best_i = y * w + x;
                                }
                            }
                        }
                        out.data_mut()[o] = best;
                        argmax.push(base + best_i);
                    }
                    PoolKind::Avg => {
                        let mut acc = T::zero();
                        for y in y0..y0 + window.0 {
                            for x in x0..x0 + window.1 {
                                acc += plane[y * w + x];
                            }
                        }
                        out.data_mut()[o] = acc / area;
                    }
                }
                o += 1;
            }
        }
    }
    Ok((
        out,
        PoolCache {
            input_shape: shape,
            argmax,
        },
    ))
}

pub fn pool2d<T: Scalar>(
    input: &Tensor4<T>,
    kind: PoolKind,
    geom: PoolGeometry,
) -> Result<(Tensor4<T>, PoolCache)> {
    pool2d_rect(input, kind, (geom.window, geom.window), (geom.stride, geom.stride))
}

pub fn pool2d_backward_rect<T: Scalar>(
    cache: &PoolCache,
    kind: PoolKind,
    window: (usize, usize),
    stride: (usize, usize),
    grad_out: &Tensor4<T>,
) -> Result<Tensor4<T>> {
    let [n, c, h, w] = cache.input_shape;
    let (ho, wo) = out_dims(cache.input_shape, window, stride)?;
    if grad_out.shape() != [n, c, ho, wo] {
        return Err(GestaltError::ShapeMismatch(format!(
            "pool grad {:?}, expected {:?}",
            grad_out.shape(),
            [n, c, ho, wo]
        )));
    }
    let mut d_input = Tensor4::zeros(cache.input_shape);
    match kind {
        PoolKind::Max => {
            for (g, &idx) in grad_out.data().iter().zip(&cache.argmax) {
                d_input.data_mut()[idx] += *g;
            }
        }
        PoolKind::Avg => {
            let area = T::from_usize(window.0 * window.1).unwrap();
            let mut o = 0;
            for plane_idx in 0..n * c {
                let base = plane_idx * h * w;
                for oy in 0..ho {
                    for ox in 0..wo {
                        let share = grad_out.data()[o] / area;
                        for y in oy * stride.0..oy * stride.0 + window.0 {
                            for x in ox * stride.1..ox * stride.1 + window.1 {
                                d_input.data_mut()[base + y * w + x] += share;
                            }
                        }
                        o += 1;
                    }
                }
            }
        }
    }
    Ok(d_input)
}

pub fn pool2d_backward<T: Scalar>(
    cache: &PoolCache,
    kind: PoolKind,
    geom: PoolGeometry,
    grad_out: &Tensor4<T>,
) -> Result<Tensor4<T>> {
    pool2d_backward_rect(
        cache,
        kind,
        (geom.window, geom.window),
        (geom.stride, geom.stride),
        grad_out,
    )
}
