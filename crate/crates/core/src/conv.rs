//! 3x3 convolution (deep-learning cross-correlation convention) with zero
//! padding, forward and backward.
//!
//! The fast path lowers each batch item to an im2col matrix and runs a
//! GEMM; large images are processed in row strips so the column matrix
//! stays cache-sized. [`conv2d_forward_naive`] is the plain 7-loop
//! reference the fast path is tested against.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor4};

pub const KERNEL: usize = 3;

/// Target size (elements) of one im2col strip buffer.
const STRIP_BUDGET: usize = 1 << 20;

/// Weights and bias of one convolution layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvParams<T = f32> {
    weights: Tensor4<T>,
    bias: Vec<T>,
}

impl<T: Scalar> ConvParams<T> {
    /// Weights must be (c_out, c_in, 3, 3); bias length c_out.
    pub fn new(weights: Tensor4<T>, bias: Vec<T>) -> Result<Self> {
        if weights.h() != KERNEL || weights.w() != KERNEL {
            return Err(Error::InvalidArgument(format!(
                "kernel spatial size must be {KERNEL}x{KERNEL}, got {}x{}",
                weights.h(),
                weights.w()
            )));
        }
        if bias.len() != weights.n() {
            return Err(Error::ShapeMismatch(format!(
                "bias length {} does not match {} output channels",
                bias.len(),
                weights.n()
            )));
        }
        if !weights.all_finite() || !bias.iter().all(|b| b.is_finite()) {
            return Err(Error::NonFinite("convolution parameters".into()));
        }
        Ok(ConvParams { weights, bias })
    }

    pub fn zeros(c_out: usize, c_in: usize) -> Self {
        ConvParams {
            weights: Tensor4::zeros(c_out, c_in, KERNEL, KERNEL),
            bias: vec![T::ZERO; c_out],
        }
    }

    #[inline]
    pub fn c_out(&self) -> usize {
        self.weights.n()
    }
    #[inline]
    pub fn c_in(&self) -> usize {
        self.weights.c()
    }
    pub fn weights(&self) -> &Tensor4<T> {
        &self.weights
    }
    pub fn weights_mut(&mut self) -> &mut Tensor4<T> {
        &mut self.weights
    }
    pub fn bias(&self) -> &[T] {
        &self.bias
    }
    pub fn bias_mut(&mut self) -> &mut [T] {
        &mut self.bias
    }

    /// Disjoint mutable views of the weights and the bias.
    pub fn weights_bias_mut(&mut self) -> (&mut Tensor4<T>, &mut [T]) {
        (&mut self.weights, &mut self.bias)
    }

    pub fn cast<U: Scalar>(&self) -> ConvParams<U> {
        ConvParams {
            weights: self.weights.cast(),
            bias: self.bias.iter().map(|b| U::from_f64(b.to_f64())).collect(),
        }
    }
}

/// Gradients of one convolution layer.
#[derive(Debug, Clone)]
pub struct ConvGrads<T = f32> {
    pub grad_input: Tensor4<T>,
    pub grad_weights: Tensor4<T>,
    pub grad_bias: Vec<T>,
}

fn out_dims(h: usize, w: usize, padding: usize) -> Result<(usize, usize)> {
    let oh = (h + 2 * padding).checked_sub(KERNEL - 1).unwrap_or(0);
    let ow = (w + 2 * padding).checked_sub(KERNEL - 1).unwrap_or(0);
    if oh == 0 || ow == 0 {
        return Err(Error::InvalidArgument(format!(
            "input {h}x{w} with padding {padding} leaves no output pixels"
        )));
    }
    Ok((oh, ow))
}

fn check_forward_shapes<T: Scalar>(input: &Tensor4<T>, p: &ConvParams<T>) -> Result<()> {
    if input.c() != p.c_in() {
        return Err(Error::ShapeMismatch(format!(
            "input has {} channels but kernel expects {}",
            input.c(),
            p.c_in()
        )));
    }
    Ok(())
}

/// Fills `col` (rows = c_in*9, cols = rows_in_strip*ow) for output rows
/// `[y0, y1)` of one batch item.
fn im2col_strip<T: Scalar>(
    item: &[T],
    c_in: usize,
    h: usize,
    w: usize,
    padding: usize,
    ow: usize,
    y0: usize,
    y1: usize,
    col: &mut [T],
) {
    let strip_cols = (y1 - y0) * ow;
    debug_assert_eq!(col.len(), c_in * KERNEL * KERNEL * strip_cols);
    for c in 0..c_in {
        let plane = &item[c * h * w..(c + 1) * h * w];
        for ky in 0..KERNEL {
            for kx in 0..KERNEL {
                let row = (c * KERNEL + ky) * KERNEL + kx;
                let col_row = &mut col[row * strip_cols..(row + 1) * strip_cols];
                for oy in y0..y1 {
                    let seg = &mut col_row[(oy - y0) * ow..(oy - y0 + 1) * ow];
                    // input row for this kernel offset; negative or past-end
                    // rows are entirely padding
                    let iy = (oy + ky) as isize - padding as isize;
                    if iy < 0 || iy >= h as isize {
                        seg.fill(T::ZERO);
                        continue;
                    }
                    let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                    // ox maps to ix = ox + kx - padding; valid ox range below
                    let lo = padding.saturating_sub(kx).min(ow);
                    let hi = (w + padding - kx).min(ow);
                    seg[..lo].fill(T::ZERO);
                    if hi > lo {
                        let ix0 = lo + kx - padding;
                        seg[lo..hi].copy_from_slice(&src[ix0..ix0 + (hi - lo)]);
                    }
                    seg[hi..].fill(T::ZERO);
                }
            }
        }
    }
}

/// Scatter-adds a full-item column-gradient matrix back into the input
/// gradient (the adjoint of [`im2col_strip`] over the whole item).
fn col2im_add<T: Scalar>(
    col: &[T],
    c_in: usize,
    h: usize,
    w: usize,
    padding: usize,
    oh: usize,
    ow: usize,
    item: &mut [T],
) {
    let cols = oh * ow;
    debug_assert_eq!(col.len(), c_in * KERNEL * KERNEL * cols);
    for c in 0..c_in {
        let plane = &mut item[c * h * w..(c + 1) * h * w];
        for ky in 0..KERNEL {
            for kx in 0..KERNEL {
                let row = (c * KERNEL + ky) * KERNEL + kx;
                let col_row = &col[row * cols..(row + 1) * cols];
                for oy in 0..oh {
                    let iy = (oy + ky) as isize - padding as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    let seg = &col_row[oy * ow..(oy + 1) * ow];
                    let lo = padding.saturating_sub(kx).min(ow);
                    let hi = (w + padding - kx).min(ow);
                    if hi > lo {
                        let ix0 = lo + kx - padding;
                        for (d, s) in dst[ix0..ix0 + (hi - lo)].iter_mut().zip(&seg[lo..hi]) {
                            *d += *s;
                        }
                    }
                }
            }
        }
    }
}

/// Cross-correlates `input` with the 3x3 kernels in `p` under zero padding.
///
/// Output shape is (n, c_out, h + 2*padding - 2, w + 2*padding - 2); with the
/// default padding of 1 the spatial size is preserved.
pub fn conv2d_forward<T: Scalar>(
    input: &Tensor4<T>,
    p: &ConvParams<T>,
    padding: usize,
) -> Result<Tensor4<T>> {
    check_forward_shapes(input, p)?;
    let (n, c_in, h, w) = input.shape();
    let (oh, ow) = out_dims(h, w, padding)?;
    let c_out = p.c_out();
    let k_elems = c_in * KERNEL * KERNEL;

    // Row strips keep the column matrix around a fixed byte budget.
    let rows_per_strip = (STRIP_BUDGET / (k_elems * ow)).clamp(1, oh);
    let mut col = vec![T::ZERO; k_elems * rows_per_strip * ow];

    let mut out = Tensor4::zeros(n, c_out, oh, ow);
    let item_out_stride = c_out * oh * ow;
    for b in 0..n {
        let item = input.item(b);
        let mut y0 = 0;
        while y0 < oh {
            let y1 = (y0 + rows_per_strip).min(oh);
            let strip_cols = (y1 - y0) * ow;
            let col_strip = &mut col[..k_elems * strip_cols];
            im2col_strip(item, c_in, h, w, padding, ow, y0, y1, col_strip);
            // out[b, :, y0..y1, :] = weights_mat (c_out x k) * col (k x strip_cols)
            T::gemm(
                c_out,
                k_elems,
                strip_cols,
                T::ONE,
                p.weights.as_slice(),
                false,
                col_strip,
                false,
                T::ZERO,
                &mut out.as_mut_slice()[b * item_out_stride + y0 * ow..],
                oh * ow,
            );
            y0 = y1;
        }
        let out_item = out.item_mut(b);
        for o in 0..c_out {
            let bias = p.bias[o];
            for v in &mut out_item[o * oh * ow..(o + 1) * oh * ow] {
                *v += bias;
            }
        }
    }
    Ok(out)
}

/// Reference implementation: direct 7-nested-loop cross-correlation with
/// zero padding. Oracle for the GEMM path; do not use in hot code.
pub fn conv2d_forward_naive<T: Scalar>(
    input: &Tensor4<T>,
    p: &ConvParams<T>,
    padding: usize,
) -> Result<Tensor4<T>> {
    check_forward_shapes(input, p)?;
    let (n, c_in, h, w) = input.shape();
    let (oh, ow) = out_dims(h, w, padding)?;
    let c_out = p.c_out();
    let mut out = Tensor4::zeros(n, c_out, oh, ow);
    for b in 0..n {
        for o in 0..c_out {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = p.bias[o];
                    for c in 0..c_in {
                        for ky in 0..KERNEL {
                            for kx in 0..KERNEL {
                                let iy = (oy + ky) as isize - padding as isize;
                                let ix = (ox + kx) as isize - padding as isize;
                                if iy < 0 || iy >= h as isize || ix < 0 || ix >= w as isize {
                                    continue;
                                }
                                acc += input.get(b, c, iy as usize, ix as usize)
                                    * p.weights.get(o, c, ky, kx);
                            }
                        }
                    }
                    out.set(b, o, oy, ox, acc);
                }
            }
        }
    }
    Ok(out)
}

/// Gradients of `sum(grad_out * conv2d_forward(input, p))` with respect to
/// the input, the weights and the bias.
pub fn conv2d_backward<T: Scalar>(
    input: &Tensor4<T>,
    p: &ConvParams<T>,
    grad_out: &Tensor4<T>,
    padding: usize,
) -> Result<ConvGrads<T>> {
    check_forward_shapes(input, p)?;
    let (n, c_in, h, w) = input.shape();
    let (oh, ow) = out_dims(h, w, padding)?;
    let c_out = p.c_out();
    if grad_out.shape() != (n, c_out, oh, ow) {
        return Err(Error::ShapeMismatch(format!(
            "grad_out shape {:?} does not match forward output ({n}, {c_out}, {oh}, {ow})",
            grad_out.shape()
        )));
    }

    let k_elems = c_in * KERNEL * KERNEL;
    let cols = oh * ow;
    let mut grad_input = Tensor4::zeros(n, c_in, h, w);
    let mut grad_weights = Tensor4::zeros(c_out, c_in, KERNEL, KERNEL);
    let mut grad_bias = vec![T::ZERO; c_out];

    let mut col = vec![T::ZERO; k_elems * cols];
    let mut col_grad = vec![T::ZERO; k_elems * cols];
    for b in 0..n {
        let g_item = grad_out.item(b);
        for o in 0..c_out {
            let mut acc = T::ZERO;
            for v in &g_item[o * cols..(o + 1) * cols] {
                acc += *v;
            }
            grad_bias[o] += acc;
        }

        im2col_strip(input.item(b), c_in, h, w, padding, ow, 0, oh, &mut col);
        // dW (c_out x k) += dOut (c_out x cols) * col^T (cols x k)
        T::gemm(
            c_out,
            cols,
            k_elems,
            T::ONE,
            g_item,
            false,
            &col,
            true,
            T::ONE,
            grad_weights.as_mut_slice(),
            k_elems,
        );
        // dCol (k x cols) = W^T (k x c_out) * dOut (c_out x cols)
        T::gemm(
            k_elems,
            c_out,
            cols,
            T::ONE,
            p.weights.as_slice(),
            true,
            g_item,
            false,
            T::ZERO,
            &mut col_grad,
            cols,
        );
        col2im_add(&col_grad, c_in, h, w, padding, oh, ow, grad_input.item_mut(b));
    }

    Ok(ConvGrads {
        grad_input,
        grad_weights,
        grad_bias,
    })
}
