//! Dense tensors in NCHW layout.
//!
//! The engine runs on `f32` for training and inference and on `f64` for
//! finite-difference gradient checks, so everything is generic over
//! [`Scalar`].

use crate::error::{Error, Result};

/// Floating-point element type of the engine: `f32` or `f64`.
///
/// Bundles the numeric traits the layers need plus a monomorphized GEMM
/// (row-major `c = alpha * a @ b + beta * c`).
pub trait Scalar:
    num_traits::Float
    + rustfft::FftNum
    + std::fmt::Debug
    + std::fmt::Display
    + Default
    + Send
    + Sync
    + 'static
{
    /// Row-major matrix multiply, `c[m x n] = alpha * a[m x k] @ b[k x n] + beta * c`.
    fn gemm(m: usize, k: usize, n: usize, alpha: Self, a: &[Self], b: &[Self], beta: Self, c: &mut [Self]);

    /// `c[m x n] = alpha * a[m x k] @ b^T + beta * c` with `b` stored row-major as `[n x k]`.
    fn gemm_nt(m: usize, k: usize, n: usize, alpha: Self, a: &[Self], b: &[Self], beta: Self, c: &mut [Self]);

    /// `c[m x n] = alpha * a^T @ b[k x n] + beta * c` with `a` stored row-major as `[k x m]`.
    fn gemm_tn(m: usize, k: usize, n: usize, alpha: Self, a: &[Self], b: &[Self], beta: Self, c: &mut [Self]);

    fn from_real(v: f64) -> Self;
    fn to_real(self) -> f64;
}

macro_rules! impl_gemm_variants {
    ($t:ty, $gemm:path) => {
        fn gemm(m: usize, k: usize, n: usize, alpha: $t, a: &[$t], b: &[$t], beta: $t, c: &mut [$t]) {
            assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
            if m == 0 || k == 0 || n == 0 {
                return;
            }
            unsafe {
                $gemm(
                    m, k, n, alpha,
                    a.as_ptr(), k as isize, 1,
                    b.as_ptr(), n as isize, 1,
                    beta,
                    c.as_mut_ptr(), n as isize, 1,
                );
            }
        }

        fn gemm_nt(m: usize, k: usize, n: usize, alpha: $t, a: &[$t], b: &[$t], beta: $t, c: &mut [$t]) {
            assert!(a.len() >= m * k && b.len() >= n * k && c.len() >= m * n);
            if m == 0 || k == 0 || n == 0 {
                return;
            }
            unsafe {
                $gemm(
                    m, k, n, alpha,
                    a.as_ptr(), k as isize, 1,
                    b.as_ptr(), 1, k as isize,
                    beta,
                    c.as_mut_ptr(), n as isize, 1,
                );
            }
        }

        fn gemm_tn(m: usize, k: usize, n: usize, alpha: $t, a: &[$t], b: &[$t], beta: $t, c: &mut [$t]) {
            assert!(a.len() >= k * m && b.len() >= k * n && c.len() >= m * n);
            if m == 0 || k == 0 || n == 0 {
                return;
            }
            unsafe {
                $gemm(
                    m, k, n, alpha,
                    a.as_ptr(), 1, m as isize,
                    b.as_ptr(), n as isize, 1,
                    beta,
                    c.as_mut_ptr(), n as isize, 1,
                );
            }
        }
    };
}

impl Scalar for f32 {
    impl_gemm_variants!(f32, matrixmultiply::sgemm);

    fn from_real(v: f64) -> f32 {
        v as f32
    }

    fn to_real(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    impl_gemm_variants!(f64, matrixmultiply::dgemm);

    fn from_real(v: f64) -> f64 {
        v
    }

    fn to_real(self) -> f64 {
        self
    }
}

/// Contiguous dense tensor. Activations use NCHW order.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(shape: &[usize]) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![T::zero(); shape.iter().product()],
        }
    }

    pub fn filled(shape: &[usize], value: T) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::config(format!(
                "tensor shape {:?} implies {} elements, got {}",
                shape,
                n,
                data.len()
            )));
        }
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::config(format!("tensor shape {:?} has a zero extent", shape)));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    /// Interpret as a 4-D activation tensor, returning `(n, c, h, w)`.
    pub fn dims4(&self) -> Result<(usize, usize, usize, usize)> {
        match self.shape.as_slice() {
            &[n, c, h, w] => Ok((n, c, h, w)),
            other => Err(Error::config(format!("expected a 4-D tensor, got shape {:?}", other))),
        }
    }

    /// Flat offset of element `(n, c, h, w)`.
    #[inline]
    pub fn idx4(&self, n: usize, c: usize, h: usize, w: usize) -> usize {
        debug_assert_eq!(self.shape.len(), 4);
        ((n * self.shape[1] + c) * self.shape[2] + h) * self.shape[3] + w
    }

    #[inline]
    pub fn at4(&self, n: usize, c: usize, h: usize, w: usize) -> T {
        self.data[self.idx4(n, c, h, w)]
    }

    #[inline]
    pub fn set4(&mut self, n: usize, c: usize, h: usize, w: usize, v: T) {
        let i = self.idx4(n, c, h, w);
        self.data[i] = v;
    }

    /// Slice holding sample `n` of a 4-D tensor.
    pub fn sample(&self, n: usize) -> &[T] {
        let per = self.shape[1] * self.shape[2] * self.shape[3];
        &self.data[n * per..(n + 1) * per]
    }

    pub fn sample_mut(&mut self, n: usize) -> &mut [T] {
        let per = self.shape[1] * self.shape[2] * self.shape[3];
        &mut self.data[n * per..(n + 1) * per]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Errors with `context` if any element is non-finite.
    pub fn check_finite(&self, context: &str) -> Result<()> {
        if self.all_finite() {
            Ok(())
        } else {
            Err(Error::numerical(format!("non-finite values in {context}")))
        }
    }

    pub fn map<U: Scalar>(&self, f: impl Fn(T) -> U) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Lossy cast between scalar types (used to move networks into the
    /// f64 gradient-check mode and back).
    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        self.map(|v| U::from_real(v.to_real()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_rejects_length_mismatch() {
        let err = Tensor::<f32>::from_vec(&[2, 3], vec![0.0; 5]).unwrap_err();
        assert!(err.to_string().contains("implies 6 elements"));
    }

    #[test]
    fn idx4_is_nchw_row_major() {
        let t = Tensor::<f32>::zeros(&[2, 3, 4, 5]);
        assert_eq!(t.idx4(0, 0, 0, 0), 0);
        assert_eq!(t.idx4(0, 0, 0, 1), 1);
        assert_eq!(t.idx4(0, 0, 1, 0), 5);
        assert_eq!(t.idx4(0, 1, 0, 0), 20);
        assert_eq!(t.idx4(1, 0, 0, 0), 60);
    }

    #[test]
    fn gemm_matches_hand_product() {
        // [1 2; 3 4] @ [5 6; 7 8] = [19 22; 43 50]
        let a = [1.0f32, 2.0, 3.0, 4.0];
        let b = [5.0f32, 6.0, 7.0, 8.0];
        let mut c = [0.0f32; 4];
        f32::gemm(2, 2, 2, 1.0, &a, &b, 0.0, &mut c);
        assert_eq!(c, [19.0, 22.0, 43.0, 50.0]);
    }

    #[test]
    fn transposed_gemm_variants_agree_with_plain() {
        // a: 2x3, b: 3x2
        let a = [1.0f64, 2.0, 3.0, 4.0, 5.0, 6.0];
        let b = [7.0f64, 8.0, 9.0, 10.0, 11.0, 12.0];
        let mut c_ref = [0.0f64; 4];
        f64::gemm(2, 3, 2, 1.0, &a, &b, 0.0, &mut c_ref);

        // b stored transposed as 2x3
        let bt = [7.0f64, 9.0, 11.0, 8.0, 10.0, 12.0];
        let mut c_nt = [0.0f64; 4];
        f64::gemm_nt(2, 3, 2, 1.0, &a, &bt, 0.0, &mut c_nt);
        assert_eq!(c_ref, c_nt);

        // a stored transposed as 3x2
        let at = [1.0f64, 4.0, 2.0, 5.0, 3.0, 6.0];
        let mut c_tn = [0.0f64; 4];
        f64::gemm_tn(2, 3, 2, 1.0, &at, &b, 0.0, &mut c_tn);
        assert_eq!(c_ref, c_tn);
    }

    #[test]
    fn check_finite_flags_nan() {
        let t = Tensor::<f64>::from_vec(&[2], vec![1.0, f64::NAN]).unwrap();
        assert!(t.check_finite("test tensor").is_err());
    }
}
