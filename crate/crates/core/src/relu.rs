//! Rectified linear activation, forward and backward.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor4};

/// Elementwise `max(0, x)`.
pub fn relu_forward<T: Scalar>(input: &Tensor4<T>) -> Tensor4<T> {
    input.map(|v| if v > T::ZERO { v } else { T::ZERO })
}

/// Passes `grad_out` through where `input > 0`; the subgradient at exactly
/// zero is taken as 0.
pub fn relu_backward<T: Scalar>(input: &Tensor4<T>, grad_out: &Tensor4<T>) -> Result<Tensor4<T>> {
    if !input.same_shape(grad_out) {
        return Err(Error::ShapeMismatch(format!(
            "relu_backward: input {:?} vs grad {:?}",
            input.shape(),
            grad_out.shape()
        )));
    }
    let data = input
        .as_slice()
        .iter()
        .zip(grad_out.as_slice())
        .map(|(&x, &g)| if x > T::ZERO { g } else { T::ZERO })
        .collect();
    // shapes match; reuse the validated shape
    Ok(Tensor4::from_vec(input.n(), input.c(), input.h(), input.w(), data)
        .expect("same shape as validated input"))
}
