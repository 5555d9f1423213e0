use super::{Scalar, Tensor4};
use crate::error::{GestaltError, Result};

pub struct LinearGrads<T> {
    pub input: Tensor4<T>,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

fn check<T: Scalar>(input: &Tensor4<T>, weight: &[T], bias: &[T]) -> Result<(usize, usize, usize)> {
    let n = input.batch();
    let f = input.item_len();
    let o = bias.len();
    if weight.len() != o * f {
        return Err(GestaltError::ShapeMismatch(format!(
            "dense weight has {} values, expected {o}x{f}",
            weight.len()
        )));
    }
    Ok((n, f, o))
}

/// `weight` is `(outputs, features)` row-major; input is flattened per item.
/// Output shape is `(batch, outputs, 1, 1)`.
pub fn fc_forward<T: Scalar>(input: &Tensor4<T>, weight: &[T], bias: &[T]) -> Result<Tensor4<T>> {
    let (n, f, o) = check(input, weight, bias)?;
    let mut out = Tensor4::zeros([n, o, 1, 1]);
    for row in out.data_mut().chunks_mut(o) {
        row.copy_from_slice(bias);
    }
    T::gemm(false, true, n, f, o, T::one(), input.data(), weight, T::one(), out.data_mut());
    out.debug_check("fc_forward");
    Ok(out)
}

pub fn fc_backward<T: Scalar>(
    input: &Tensor4<T>,
    weight: &[T],
    grad_out: &Tensor4<T>,
) -> Result<LinearGrads<T>> {
    let n = input.batch();
    let f = input.item_len();
    let o = grad_out.item_len();
    if grad_out.batch() != n || weight.len() != o * f {
        return Err(GestaltError::ShapeMismatch(format!(
            "dense backward: input {:?}, grad {:?}, weight {}",
            input.shape(),
            grad_out.shape(),
            weight.len()
        )));
    }
    let mut d_input = Tensor4::zeros(input.shape());
    let mut d_weight = vec![T::zero(); o * f];
    let mut d_bias = vec![T::zero(); o];
    for row in grad_out.data().chunks(o) {
        for (b, g) in d_bias.iter_mut().zip(row) {
            *b += *g;
        }
    }
    T::gemm(true, false, o, n, f, T::one(), grad_out.data(), input.data(), T::zero(), &mut d_weight);
    T::gemm(false, false, n, o, f, T::one(), grad_out.data(), weight, T::zero(), d_input.data_mut());
    Ok(LinearGrads {
        input: d_input,
        weight: d_weight,
        bias: d_bias,
    })
}
