//! Dense f32 tensors (CHW layout for feature maps) and GEMM helpers.

use std::fmt;

#[derive(Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        let len = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; len],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f32>) -> Self {
        assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor {
            shape: shape.to_vec(),
            data,
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// (channels, height, width) view of a rank-3 tensor; rank-1 tensors are
    /// treated as (n, 1, 1).
    pub fn chw(&self) -> (usize, usize, usize) {
        match self.shape.len() {
            3 => (self.shape[0], self.shape[1], self.shape[2]),
            1 => (self.shape[0], 1, 1),
            _ => panic!("expected rank-1 or rank-3 tensor, got {:?}", self.shape),
        }
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor{:?}[{} values]", self.shape, self.data.len())
    }
}

/// C = alpha * A(m x k) * B(k x n) + beta * C, all row-major.
pub fn gemm_nn(m: usize, k: usize, n: usize, alpha: f32, a: &[f32], b: &[f32], beta: f32, c: &mut [f32]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    unsafe {
        gemm::gemm(
            m, n, k,
            c.as_mut_ptr(), 1, n as isize,
            beta != 0.0,
            a.as_ptr(), 1, k as isize,
            b.as_ptr(), 1, n as isize,
            beta, alpha,
            false, false, false,
            gemm::Parallelism::None,
        );
    }
}

/// C = alpha * A(m x k) * B^T + beta * C where B is stored row-major n x k.
pub fn gemm_nt(m: usize, k: usize, n: usize, alpha: f32, a: &[f32], b: &[f32], beta: f32, c: &mut [f32]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(c.len(), m * n);
    unsafe {
        gemm::gemm(
            m, n, k,
            c.as_mut_ptr(), 1, n as isize,
            beta != 0.0,
            a.as_ptr(), 1, k as isize,
            b.as_ptr(), k as isize, 1,
            beta, alpha,
            false, false, false,
            gemm::Parallelism::None,
        );
    }
}

/// C = alpha * A^T * B + beta * C where A is stored row-major k x m.
pub fn gemm_tn(m: usize, k: usize, n: usize, alpha: f32, a: &[f32], b: &[f32], beta: f32, c: &mut [f32]) {
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    unsafe {
        gemm::gemm(
            m, n, k,
            c.as_mut_ptr(), 1, n as isize,
            beta != 0.0,
            a.as_ptr(), m as isize, 1,
            b.as_ptr(), 1, n as isize,
            beta, alpha,
            false, false, false,
            gemm::Parallelism::None,
        );
    }
}

/// dst(m×n) (+)= a(m×k)·b(k×n) with arbitrary element strides per operand.
/// When `accumulate` is false the destination is overwritten.
///
/// # Safety
/// Each pointer must stay in bounds for every index reachable through its
/// strides: operand (i, j) is read or written at `ptr + i*rs + j*cs`.
pub unsafe fn gemm_strided(
    m: usize, n: usize, k: usize,
    dst: *mut f32, dst_cs: isize, dst_rs: isize, accumulate: bool,
    a: *const f32, a_cs: isize, a_rs: isize,
    b: *const f32, b_cs: isize, b_rs: isize,
) {
    gemm::gemm(
        m, n, k,
        dst, dst_cs, dst_rs,
        accumulate,
        a, a_cs, a_rs,
        b, b_cs, b_rs,
        1.0f32, 1.0f32,
        false, false, false,
        gemm::Parallelism::None,
    );
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(m: usize, k: usize, n: usize, a: &[f32], b: &[f32]) -> Vec<f32> {
        let mut c = vec![0.0f32; m * n];
        for i in 0..m {
            for l in 0..k {
                for j in 0..n {
                    c[i * n + j] += a[i * k + l] * b[l * n + j];
                }
            }
        }
        c
    }

    #[test]
    fn gemm_variants_agree_with_naive() {
        let (m, k, n) = (4, 5, 3);
        let a: Vec<f32> = (0..m * k).map(|i| (i as f32) * 0.3 - 2.0).collect();
        let b: Vec<f32> = (0..k * n).map(|i| (i as f32) * 0.1 + 0.5).collect();
        let want = naive(m, k, n, &a, &b);

        let mut c = vec![0.0; m * n];
        gemm_nn(m, k, n, 1.0, &a, &b, 0.0, &mut c);
        for (x, y) in c.iter().zip(&want) {
            assert!((x - y).abs() < 1e-4);
        }

        // B^T path: store b transposed (n x k) and ask for A * B^T.
        let mut bt = vec![0.0; n * k];
        for l in 0..k {
            for j in 0..n {
                bt[j * k + l] = b[l * n + j];
            }
        }
        let mut c2 = vec![0.0; m * n];
        gemm_nt(m, k, n, 1.0, &a, &bt, 0.0, &mut c2);
        for (x, y) in c2.iter().zip(&want) {
            assert!((x - y).abs() < 1e-4);
        }

        // A^T path: store a transposed (k x m).
        let mut at = vec![0.0; k * m];
        for i in 0..m {
            for l in 0..k {
                at[l * m + i] = a[i * k + l];
            }
        }
        let mut c3 = vec![0.0; m * n];
        gemm_tn(m, k, n, 1.0, &at, &b, 0.0, &mut c3);
        for (x, y) in c3.iter().zip(&want) {
            assert!((x - y).abs() < 1e-4);
        }
    }
}
