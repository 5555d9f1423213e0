//! 2-D cross-correlation via im2col + GEMM.

use serde::{Deserialize, Serialize};

use super::{Scalar, Tensor4};
use crate::error::{GestaltError, Result};

/// Square kernel geometry shared by both spatial axes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvGeometry {
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeometry {
    pub fn same(kernel: usize) -> Self {
        Self {
            kernel,
            stride: 1,
            pad: kernel / 2,
        }
    }

    pub fn output_dim(&self, input: usize) -> Option<usize> {
        let padded = input + 2 * self.pad;
        if self.kernel == 0 || self.stride == 0 || padded < self.kernel {
            return None;
        }
        Some((padded - self.kernel) / self.stride + 1)
    }
}

pub struct ConvGrads<T> {
    pub input: Tensor4<T>,
    pub weight: Tensor4<T>,
    pub bias: Vec<T>,
}

fn check<T: Scalar>(
    input: &Tensor4<T>,
    weight: &Tensor4<T>,
    bias: &[T],
    geom: ConvGeometry,
) -> Result<(usize, usize)> {
    let [cout, cin, kh, kw] = weight.shape();
    if cin != input.channels() {
        return Err(GestaltError::ShapeMismatch(format!(
            "conv expects {cin} input channels, got {}",
            input.channels()
        )));
    }
    if kh != geom.kernel || kw != geom.kernel || bias.len() != cout {
        return Err(GestaltError::ShapeMismatch(format!(
            "conv weight {:?} / bias {} inconsistent with kernel {}",
            weight.shape(),
            bias.len(),
            geom.kernel
        )));
    }
    match (geom.output_dim(input.height()), geom.output_dim(input.width())) {
        (Some(h), Some(w)) if h >= 1 && w >= 1 => Ok((h, w)),
        _ => Err(GestaltError::ShapeMismatch(format!(
            "conv output empty for input {:?}",
            input.shape()
        ))),
    }
}

fn im2col<T: Scalar>(
    item: &[T],
    (c, h, w): (usize, usize, usize),
    geom: ConvGeometry,
    (ho, wo): (usize, usize),
    cols: &mut [T],
) {
    let k = geom.kernel;
    let hw = ho * wo;
    for ci in 0..c {
        let plane = &item[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let dst = &mut cols[row * hw..(row + 1) * hw];
                for oy in 0..ho {
                    let iy = (oy * geom.stride + ky) as isize - geom.pad as isize;
                    let line = &mut dst[oy * wo..(oy + 1) * wo];
                    if iy < 0 || iy >= h as isize {
                        line.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, d) in line.iter_mut().enumerate() {
                        let ix = (ox * geom.stride + kx) as isize - geom.pad as isize;
                        *d = if ix < 0 || ix >= w as isize {
                            T::zero()
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im<T: Scalar>(
    cols: &[T],
    (c, h, w): (usize, usize, usize),
    geom: ConvGeometry,
    (ho, wo): (usize, usize),
    item: &mut [T],
) {
    let k = geom.kernel;
    let hw = ho * wo;
    for ci in 0..c {
        let plane = &mut item[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let src = &cols[row * hw..(row + 1) * hw];
                for oy in 0..ho {
                    let iy = (oy * geom.stride + ky) as isize - geom.pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    for ox in 0..wo {
                        let ix = (ox * geom.stride + kx) as isize - geom.pad as isize;
                        if ix >= 0 && ix < w as isize {
                            dst[ix as usize] += src[oy * wo + ox];
                        }
                    }
                }
            }
        }
    }
}

/// `weight` has shape `(out_channels, in_channels, kernel, kernel)`.
pub fn conv2d_forward<T: Scalar>(
    input: &Tensor4<T>,
    weight: &Tensor4<T>,
    bias: &[T],
    geom: ConvGeometry,
) -> Result<Tensor4<T>> {
    let (ho, wo) = check(input, weight, bias, geom)?;
    let [n, c, h, w] = input.shape();
    let cout = weight.shape()[0];
    let kdim = c * geom.kernel * geom.kernel;
    let hw = ho * wo;
    let mut out = Tensor4::zeros([n, cout, ho, wo]);
    let mut cols = vec![T::zero(); kdim * hw];
    for b in 0..n {
        im2col(input.item(b), (c, h, w), geom, (ho, wo), &mut cols);
        let dst = out.item_mut(b);
        for (co, row) in dst.chunks_mut(hw).enumerate() {
            row.fill(bias[co]);
        }
        T::gemm(false, false, cout, kdim, hw, T::one(), weight.data(), &cols, T::one(), dst);
    }
    out.debug_check("conv2d_forward");
    Ok(out)
}

pub fn conv2d_backward<T: Scalar>(
    input: &Tensor4<T>,
    weight: &Tensor4<T>,
    geom: ConvGeometry,
    grad_out: &Tensor4<T>,
) -> Result<ConvGrads<T>> {
    let cout = weight.shape()[0];
    let zeros = vec![T::zero(); cout];
    let (ho, wo) = check(input, weight, &zeros, geom)?;
    let [n, c, h, w] = input.shape();
    if grad_out.shape() != [n, cout, ho, wo] {
        return Err(GestaltError::ShapeMismatch(format!(
            "conv grad_out {:?}, expected {:?}",
            grad_out.shape(),
            [n, cout, ho, wo]
        )));
    }
    let kdim = c * geom.kernel * geom.kernel;
    let hw = ho * wo;
    let mut d_input = Tensor4::zeros(input.shape());
    let mut d_weight = Tensor4::zeros(weight.shape());
    let mut d_bias = vec![T::zero(); cout];
    let mut cols = vec![T::zero(); kdim * hw];
    let mut d_cols = vec![T::zero(); kdim * hw];
    for b in 0..n {
        let g = grad_out.item(b);
        for (co, row) in g.chunks(hw).enumerate() {
            d_bias[co] += row.iter().fold(T::zero(), |a, &v| a + v);
        }
        im2col(input.item(b), (c, h, w), geom, (ho, wo), &mut cols);
        T::gemm(false, true, cout, hw, kdim, T::one(), g, &cols, T::one(), d_weight.data_mut());
        T::gemm(true, false, kdim, cout, hw, T::one(), weight.data(), g, T::zero(), &mut d_cols);
        col2im(&d_cols, (c, h, w), geom, (ho, wo), d_input.item_mut(b));
    }
    Ok(ConvGrads {
        input: d_input,
        weight: d_weight,
        bias: d_bias,
    })
}
