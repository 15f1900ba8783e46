//! Small dense row-major matrices and a jittered Cholesky factorization.
//!
//! Sizes in this crate are modest (inducing sets of tens of points, oracle
//! problems of a few thousand), so everything is written directly against
//! `Vec<T>` storage without a BLAS backend.

use std::ops::{Index, IndexMut};

use crate::error::{Error, Result};
use crate::Scalar;

/// Relative jitter added to the diagonal on the first factorization attempt.
pub const JITTER_START: f64 = 1e-8;
/// Largest relative jitter tried before giving up.
pub const JITTER_MAX: f64 = 1e-2;

#[derive(Clone, Debug, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = T::one();
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Matrix { rows, cols, data }
    }

    /// Wraps row-major storage. Panics if the length does not match.
    pub fn from_row_major(rows: usize, cols: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), rows * cols, "row-major buffer has wrong length");
        Matrix { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn diagonal(&self) -> Vec<T> {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).collect()
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn matmul(&self, other: &Self) -> Self {
        assert_eq!(self.cols, other.rows, "matmul dimension mismatch");
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == T::zero() {
                    continue;
                }
                let src = other.row(k);
                for (o, &b) in out.row_mut(i).iter_mut().zip(src) {
                    *o = *o + a * b;
                }
            }
        }
        out
    }

    pub fn matvec(&self, v: &[T]) -> Vec<T> {
        assert_eq!(self.cols, v.len(), "matvec dimension mismatch");
        (0..self.rows).map(|i| dot(self.row(i), v)).collect()
    }

    /// `selfᵀ v`
    pub fn t_matvec(&self, v: &[T]) -> Vec<T> {
        assert_eq!(self.rows, v.len(), "t_matvec dimension mismatch");
        let mut out = vec![T::zero(); self.cols];
        for (i, &vi) in v.iter().enumerate() {
            for (o, &a) in out.iter_mut().zip(self.row(i)) {
                *o = *o + a * vi;
            }
        }
        out
    }

    pub fn add_diagonal(&mut self, value: T) {
        for i in 0..self.rows.min(self.cols) {
            self[(i, i)] = self[(i, i)] + value;
        }
    }

    pub fn trace(&self) -> T {
        self.diagonal().into_iter().sum()
    }

    pub fn max_asymmetry(&self) -> T {
        let mut worst = T::zero();
        for i in 0..self.rows {
            for j in 0..i {
                worst = worst.max((self[(i, j)] - self[(j, i)]).abs());
            }
        }
        worst
    }
}

impl<T> Index<(usize, usize)> for Matrix<T> {
    type Output = T;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &T {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl<T> IndexMut<(usize, usize)> for Matrix<T> {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

/// Dot product with four independent accumulators.
#[inline]
pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let n = a.len();
    let chunks = n / 4;
    let (mut s0, mut s1, mut s2, mut s3) = (T::zero(), T::zero(), T::zero(), T::zero());
    for c in 0..chunks {
        let k = 4 * c;
        s0 = s0 + a[k] * b[k];
        s1 = s1 + a[k + 1] * b[k + 1];
        s2 = s2 + a[k + 2] * b[k + 2];
        s3 = s3 + a[k + 3] * b[k + 3];
    }
    let mut s = (s0 + s1) + (s2 + s3);
    for k in 4 * chunks..n {
        s = s + a[k] * b[k];
    }
    s
}

/// Lower Cholesky factor of `A + jitter·I`.
#[derive(Clone, Debug)]
pub struct Cholesky<T> {
    lower: Matrix<T>,
    jitter: T,
}

impl<T: Scalar> Cholesky<T> {
    /// Factors `a` with no added jitter; `None` if it is not numerically positive definite.
    pub fn exact(a: &Matrix<T>) -> Option<Self> {
        factor_in_place(a.clone()).map(|lower| Cholesky {
            lower,
            jitter: T::zero(),
        })
    }

    /// Factors `a + j·scale·I`, starting at `j = 1e-8` and escalating ×10 up
    /// to `1e-2` before reporting a numerical error tagged with `context`.
    pub fn jittered(a: &Matrix<T>, scale: T, context: &str) -> Result<Self> {
        if !a.is_square() {
            return Err(Error::numerical(
                context,
                format!("cannot factor a {}×{} matrix", a.rows(), a.cols()),
            ));
        }
        let ten = T::of(10.0);
        let max = T::of(JITTER_MAX) * scale;
        let mut jitter = T::of(JITTER_START) * scale;
        loop {
            let mut shifted = a.clone();
            shifted.add_diagonal(jitter);
            if let Some(lower) = factor_in_place(shifted) {
                return Ok(Cholesky { lower, jitter });
            }
            // guard the comparison against rounding in the ×10 ladder
            if jitter >= max * T::of(0.999) {
                return Err(Error::numerical(
                    context,
                    format!(
                        "Cholesky failed on a {}×{} matrix after jitter escalation to {:e}",
                        a.rows(),
                        a.cols(),
                        jitter.as_f64()
                    ),
                ));
            }
            jitter = jitter * ten;
        }
    }

    pub fn lower(&self) -> &Matrix<T> {
        &self.lower
    }

    /// Absolute jitter that was added to the diagonal.
    pub fn jitter(&self) -> T {
        self.jitter
    }

    pub fn dim(&self) -> usize {
        self.lower.rows()
    }

    /// Solves `L x = b`.
    pub fn solve_lower(&self, b: &[T]) -> Vec<T> {
        let n = self.dim();
        let mut x = b.to_vec();
        for i in 0..n {
            let row = self.lower.row(i);
            let s = x[i] - dot(&row[..i], &x[..i]);
            x[i] = s / row[i];
        }
        x
    }

    /// Solves `Lᵀ x = b`.
    pub fn solve_upper(&self, b: &[T]) -> Vec<T> {
        let n = self.dim();
        let mut x = b.to_vec();
        for i in (0..n).rev() {
            let mut s = x[i];
            for k in i + 1..n {
                s = s - self.lower[(k, i)] * x[k];
            }
            x[i] = s / self.lower[(i, i)];
        }
        x
    }

    /// Solves `(L Lᵀ) x = b`.
    pub fn solve(&self, b: &[T]) -> Vec<T> {
        self.solve_upper(&self.solve_lower(b))
    }

    /// Solves column by column; `b` is n×k.
    pub fn solve_matrix(&self, b: &Matrix<T>) -> Matrix<T> {
        let n = self.dim();
        let mut out = Matrix::zeros(n, b.cols());
        let mut col = vec![T::zero(); n];
        for j in 0..b.cols() {
            for (i, c) in col.iter_mut().enumerate() {
                *c = b[(i, j)];
            }
            let x = self.solve(&col);
            for (i, v) in x.into_iter().enumerate() {
                out[(i, j)] = v;
            }
        }
        out
    }

    pub fn inverse(&self) -> Matrix<T> {
        let mut inv = self.solve_matrix(&Matrix::identity(self.dim()));
        symmetrize(&mut inv);
        inv
    }

    pub fn log_det(&self) -> T {
        let two = T::of(2.0);
        self.lower.diagonal().into_iter().map(|d| two * d.ln()).sum()
    }
}

/// Averages a square matrix with its transpose in place.
pub fn symmetrize<T: Scalar>(m: &mut Matrix<T>) {
    let half = T::of(0.5);
    for i in 0..m.rows() {
        for j in 0..i {
            let v = half * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// Inverse of a lower-triangular matrix with nonzero diagonal.
pub fn lower_triangular_inverse<T: Scalar>(l: &Matrix<T>) -> Matrix<T> {
    let n = l.rows();
    let mut inv = Matrix::zeros(n, n);
    for j in 0..n {
        inv[(j, j)] = T::one() / l[(j, j)];
        for i in j + 1..n {
            let mut s = T::zero();
            for k in j..i {
                s = s + l[(i, k)] * inv[(k, j)];
            }
            inv[(i, j)] = -s / l[(i, i)];
        }
    }
    inv
}

fn factor_in_place<T: Scalar>(mut a: Matrix<T>) -> Option<Matrix<T>> {
    let n = a.rows();
    for i in 0..n {
        for j in 0..=i {
            let (head, tail) = a.data.split_at_mut(i * n);
            let row_i = &tail[..n];
            let s = if j == i {
                row_i[j] - dot(&row_i[..j], &row_i[..j])
            } else {
                let row_j = &head[j * n..j * n + n];
                (row_i[j] - dot(&row_i[..j], &row_j[..j])) / row_j[j]
            };
            if j == i {
                if !(s > T::zero()) || !s.is_finite() {
                    return None;
                }
                tail[j] = s.sqrt();
            } else {
                tail[j] = s;
            }
        }
        for j in i + 1..n {
            a.data[i * n + j] = T::zero();
        }
    }
    Some(a)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spd3() -> Matrix<f64> {
        Matrix::from_row_major(3, 3, vec![4.0, 2.0, 0.6, 2.0, 5.0, 1.0, 0.6, 1.0, 3.0])
    }

    #[test]
    fn cholesky_reconstructs_input() {
        let a = spd3();
        let c = Cholesky::exact(&a).unwrap();
        let l = c.lower();
        let back = l.matmul(&l.transpose());
        for i in 0..3 {
            for j in 0..3 {
                assert!((back[(i, j)] - a[(i, j)]).abs() < 1e-12);
            }
            for j in i + 1..3 {
                assert_eq!(l[(i, j)], 0.0);
            }
        }
    }

    #[test]
    fn solve_and_inverse_agree() {
        let a = spd3();
        let c = Cholesky::exact(&a).unwrap();
        let x = c.solve(&[1.0, -2.0, 0.5]);
        let ax = a.matvec(&x);
        assert!((ax[0] - 1.0).abs() < 1e-12 && (ax[1] + 2.0).abs() < 1e-12 && (ax[2] - 0.5).abs() < 1e-12);
        let id = a.matmul(&c.inverse());
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((id[(i, j)] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn log_det_matches_cofactor_expansion() {
        let a = spd3();
        let det = a[(0, 0)] * (a[(1, 1)] * a[(2, 2)] - a[(1, 2)] * a[(2, 1)])
            - a[(0, 1)] * (a[(1, 0)] * a[(2, 2)] - a[(1, 2)] * a[(2, 0)])
            + a[(0, 2)] * (a[(1, 0)] * a[(2, 1)] - a[(1, 1)] * a[(2, 0)]);
        let c = Cholesky::exact(&a).unwrap();
        assert!((c.log_det() - det.ln()).abs() < 1e-12);
    }

    #[test]
    fn jitter_escalates_on_singular_matrix() {
        // rank one: exact factorization fails, jittered succeeds above the start level
        let a = Matrix::from_row_major(2, 2, vec![1.0, 1.0, 1.0, 1.0]);
        let c = Cholesky::jittered(&a, 1.0, "rank-one").unwrap();
        assert!(c.jitter() >= 1e-8);
    }

    #[test]
    fn jitter_failure_names_context() {
        let a = Matrix::from_row_major(2, 2, vec![-1.0, 0.0, 0.0, -1.0]);
        let err = Cholesky::jittered(&a, 1.0, "partition 7").unwrap_err();
        assert!(err.to_string().contains("partition 7"), "{err}");
    }

    #[test]
    fn lower_inverse_is_inverse() {
        let c = Cholesky::exact(&spd3()).unwrap();
        let inv = lower_triangular_inverse(c.lower());
        let id = c.lower().matmul(&inv);
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((id[(i, j)] - want).abs() < 1e-12);
            }
        }
    }
}
