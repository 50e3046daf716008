//! Dense 4-D tensor in (batch, channel, height, width) layout.
//!
//! All network math runs on [`Tensor4`]. Elements are stored row-major with
//! the width axis fastest. The element type is generic so the production
//! path runs in f32 while gradient checking runs the identical code in f64.

use std::fmt::Debug;
use std::ops::{Add, AddAssign, Div, DivAssign, Mul, MulAssign, Neg, Sub, SubAssign};

use crate::error::{Error, Result};

/// Float element type of the numerical kernels.
pub trait Scalar:
    Copy
    + Clone
    + Debug
    + Default
    + PartialOrd
    + Send
    + Sync
    + 'static
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
{
    const ZERO: Self;
    const ONE: Self;

    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
    fn sqrt(self) -> Self;
    fn abs(self) -> Self;
    fn is_finite(self) -> bool;

    /// Row-major GEMM: `c = alpha * op(a) * op(b) + beta * c` where `op`
    /// optionally transposes. `a` is logically (m, k) after `op`, `b` is
    /// (k, n), `c` is (m, n) with rows `c_row_stride` elements apart
    /// (`c_row_stride == n` for a contiguous output).
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        a_trans: bool,
        b: &[Self],
        b_trans: bool,
        beta: Self,
        c: &mut [Self],
        c_row_stride: usize,
    );
}

macro_rules! impl_scalar {
    ($t:ty, $gemm:path) => {
        impl Scalar for $t {
            const ZERO: Self = 0.0;
            const ONE: Self = 1.0;

            #[inline]
            fn from_f64(v: f64) -> Self {
                v as $t
            }
            #[inline]
            fn to_f64(self) -> f64 {
                self as f64
            }
            #[inline]
            fn sqrt(self) -> Self {
                self.sqrt()
            }
            #[inline]
            fn abs(self) -> Self {
                self.abs()
            }
            #[inline]
            fn is_finite(self) -> bool {
                self.is_finite()
            }

            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                alpha: Self,
                a: &[Self],
                a_trans: bool,
                b: &[Self],
                b_trans: bool,
                beta: Self,
                c: &mut [Self],
                c_row_stride: usize,
            ) {
                assert_eq!(a.len(), m * k, "gemm: lhs length");
                assert_eq!(b.len(), k * n, "gemm: rhs length");
                assert!(c_row_stride >= n, "gemm: output row stride too small");
                assert!(c.len() >= (m - 1) * c_row_stride + n, "gemm: out length");
                let (rsa, csa) = if a_trans { (1, m as isize) } else { (k as isize, 1) };
                let (rsb, csb) = if b_trans { (1, k as isize) } else { (n as isize, 1) };
                // Safety: lengths checked above; strides describe the same
                // allocations row-major or transposed.
                unsafe {
                    $gemm(
                        m,
                        k,
                        n,
                        alpha,
                        a.as_ptr(),
                        rsa,
                        csa,
                        b.as_ptr(),
                        rsb,
                        csb,
                        beta,
                        c.as_mut_ptr(),
                        c_row_stride as isize,
                        1,
                    );
                }
            }
        }
    };
}

impl_scalar!(f32, matrixmultiply::sgemm);
impl_scalar!(f64, matrixmultiply::dgemm);

/// Forward-pass mode: training uses batch statistics and retains caches,
/// evaluation uses running statistics and is a pure function.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Dense (n, c, h, w) tensor, row-major with w fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor4<T = f32> {
    shape: [usize; 4],
    data: Vec<T>,
}

impl<T: Scalar> Tensor4<T> {
    /// Zero-filled tensor. All dimensions must be at least 1.
    pub fn zeros(n: usize, c: usize, h: usize, w: usize) -> Self {
        assert!(
            n >= 1 && c >= 1 && h >= 1 && w >= 1,
            "tensor dimensions must be >= 1, got ({n}, {c}, {h}, {w})"
        );
        Tensor4 {
            shape: [n, c, h, w],
            data: vec![T::ZERO; n * c * h * w],
        }
    }

    /// Builds a tensor from existing data, validating length, dimensions
    /// and finiteness.
    pub fn from_vec(n: usize, c: usize, h: usize, w: usize, data: Vec<T>) -> Result<Self> {
        if n < 1 || c < 1 || h < 1 || w < 1 {
            return Err(Error::InvalidArgument(format!(
                "tensor dimensions must be >= 1, got ({n}, {c}, {h}, {w})"
            )));
        }
        if data.len() != n * c * h * w {
            return Err(Error::ShapeMismatch(format!(
                "data length {} does not match shape ({n}, {c}, {h}, {w})",
                data.len()
            )));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("tensor constructor input".into()));
        }
        Ok(Tensor4 {
            shape: [n, c, h, w],
            data,
        })
    }

    pub fn from_fn(n: usize, c: usize, h: usize, w: usize, mut f: impl FnMut(usize, usize, usize, usize) -> T) -> Self {
        let mut t = Tensor4::zeros(n, c, h, w);
        for b in 0..n {
            for ch in 0..c {
                for y in 0..h {
                    for x in 0..w {
                        let idx = t.index(b, ch, y, x);
                        t.data[idx] = f(b, ch, y, x);
                    }
                }
            }
        }
        t
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.shape[0]
    }
    #[inline]
    pub fn c(&self) -> usize {
        self.shape[1]
    }
    #[inline]
    pub fn h(&self) -> usize {
        self.shape[2]
    }
    #[inline]
    pub fn w(&self) -> usize {
        self.shape[3]
    }
    #[inline]
    pub fn shape(&self) -> (usize, usize, usize, usize) {
        (self.shape[0], self.shape[1], self.shape[2], self.shape[3])
    }
    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }
    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    fn index(&self, b: usize, c: usize, y: usize, x: usize) -> usize {
        debug_assert!(b < self.shape[0] && c < self.shape[1] && y < self.shape[2] && x < self.shape[3]);
        ((b * self.shape[1] + c) * self.shape[2] + y) * self.shape[3] + x
    }

    #[inline]
    pub fn get(&self, b: usize, c: usize, y: usize, x: usize) -> T {
        self.data[self.index(b, c, y, x)]
    }

    #[inline]
    pub fn set(&mut self, b: usize, c: usize, y: usize, x: usize, v: T) {
        let idx = self.index(b, c, y, x);
        self.data[idx] = v;
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    /// A single batch item's (c, h, w) block.
    pub fn item(&self, b: usize) -> &[T] {
        let stride = self.shape[1] * self.shape[2] * self.shape[3];
        &self.data[b * stride..(b + 1) * stride]
    }

    pub fn item_mut(&mut self, b: usize) -> &mut [T] {
        let stride = self.shape[1] * self.shape[2] * self.shape[3];
        &mut self.data[b * stride..(b + 1) * stride]
    }

    pub fn same_shape(&self, other: &Tensor4<T>) -> bool {
        self.shape == other.shape
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Tensor4<T> {
        Tensor4 {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Elementwise `self - other`.
    pub fn sub(&self, other: &Tensor4<T>) -> Result<Tensor4<T>> {
        if !self.same_shape(other) {
            return Err(Error::ShapeMismatch(format!(
                "sub: {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        Ok(Tensor4 {
            shape: self.shape,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| a - b)
                .collect(),
        })
    }

    /// Elementwise `self + other`.
    pub fn add(&self, other: &Tensor4<T>) -> Result<Tensor4<T>> {
        if !self.same_shape(other) {
            return Err(Error::ShapeMismatch(format!(
                "add: {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        Ok(Tensor4 {
            shape: self.shape,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| a + b)
                .collect(),
        })
    }

    /// Converts element type, used to lift f32 models into the f64
    /// gradient-checking path.
    pub fn cast<U: Scalar>(&self) -> Tensor4<U> {
        Tensor4 {
            shape: self.shape,
            data: self.data.iter().map(|v| U::from_f64(v.to_f64())).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_validates_length() {
        let err = Tensor4::<f32>::from_vec(1, 1, 2, 2, vec![0.0; 3]).unwrap_err();
        assert!(matches!(err, Error::ShapeMismatch(_)));
    }

    #[test]
    fn from_vec_rejects_zero_dim() {
        let err = Tensor4::<f32>::from_vec(1, 0, 2, 2, vec![]).unwrap_err();
        assert!(matches!(err, Error::InvalidArgument(_)));
    }

    #[test]
    fn from_vec_rejects_non_finite() {
        let err = Tensor4::<f32>::from_vec(1, 1, 1, 2, vec![0.0, f32::NAN]).unwrap_err();
        assert!(matches!(err, Error::NonFinite(_)));
    }

    #[test]
    fn indexing_is_row_major_w_fastest() {
        let t = Tensor4::<f32>::from_vec(1, 2, 2, 3, (0..12).map(|v| v as f32).collect()).unwrap();
        assert_eq!(t.get(0, 0, 0, 0), 0.0);
        assert_eq!(t.get(0, 0, 0, 2), 2.0);
        assert_eq!(t.get(0, 0, 1, 0), 3.0);
        assert_eq!(t.get(0, 1, 0, 0), 6.0);
        assert_eq!(t.get(0, 1, 1, 2), 11.0);
    }

    #[test]
    fn sub_requires_same_shape() {
        let a = Tensor4::<f32>::zeros(1, 1, 2, 2);
        let b = Tensor4::<f32>::zeros(1, 1, 2, 3);
        assert!(a.sub(&b).is_err());
    }

    #[test]
    fn gemm_small_known_product() {
        // [1 2; 3 4] * [5 6; 7 8] = [19 22; 43 50]
        let a = [1.0f32, 2.0, 3.0, 4.0];
        let b = [5.0f32, 6.0, 7.0, 8.0];
        let mut c = [0.0f32; 4];
        f32::gemm(2, 2, 2, 1.0, &a, false, &b, false, 0.0, &mut c, 2);
        assert_eq!(c, [19.0, 22.0, 43.0, 50.0]);
    }

    #[test]
    fn gemm_transpose_flags() {
        // a^T where a is stored (2x3): logical (3x2)
        let a = [1.0f64, 2.0, 3.0, 4.0, 5.0, 6.0]; // rows [1 2 3], [4 5 6]
        let b = [1.0f64, 0.0, 0.0, 1.0]; // identity 2x2
        let mut c = [0.0f64; 6];
        f64::gemm(3, 2, 2, 1.0, &a, true, &b, false, 0.0, &mut c, 2);
        assert_eq!(c, [1.0, 4.0, 2.0, 5.0, 3.0, 6.0]);
    }

    #[test]
    fn gemm_strided_output_rows() {
        // identity * [1 2; 3 4] written with row stride 3
        let a = [1.0f32, 0.0, 0.0, 1.0];
        let b = [1.0f32, 2.0, 3.0, 4.0];
        let mut c = [9.0f32; 6];
        f32::gemm(2, 2, 2, 1.0, &a, false, &b, false, 0.0, &mut c, 3);
        assert_eq!(c, [1.0, 2.0, 9.0, 3.0, 4.0, 9.0]);
    }
}
