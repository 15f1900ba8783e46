use std::ops::Range;

use crate::error::{Error, Result};
use crate::gp_math::KernelParams;
use crate::linalg::Matrix;
use crate::Scalar;

/// Offsets of each parameter block in the flat unconstrained vector:
/// `m★`, packed `L★` (row-major lower triangle, log diagonal), `z★` row-major,
/// log-lengthscales, log-σ²_f, log-β.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamLayout {
    pub num_inducing: usize,
    pub dim: usize,
}

impl ParamLayout {
    pub fn new(num_inducing: usize, dim: usize) -> Self {
        ParamLayout { num_inducing, dim }
    }

    pub fn packed_len(&self) -> usize {
        self.num_inducing * (self.num_inducing + 1) / 2
    }

    pub fn len(&self) -> usize {
        let (m, d) = (self.num_inducing, self.dim);
        m + self.packed_len() + m * d + d + 2
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn mean(&self) -> Range<usize> {
        0..self.num_inducing
    }

    pub fn chol(&self) -> Range<usize> {
        let s = self.mean().end;
        s..s + self.packed_len()
    }

    pub fn inducing(&self) -> Range<usize> {
        let s = self.chol().end;
        s..s + self.num_inducing * self.dim
    }

    pub fn log_lengthscales(&self) -> Range<usize> {
        let s = self.inducing().end;
        s..s + self.dim
    }

    pub fn log_variance(&self) -> usize {
        self.log_lengthscales().end
    }

    pub fn log_noise_precision(&self) -> usize {
        self.log_variance() + 1
    }

    /// Index of `L★[i][j]` (j ≤ i) inside the packed block.
    #[inline]
    pub fn packed_index(i: usize, j: usize) -> usize {
        debug_assert!(j <= i);
        i * (i + 1) / 2 + j
    }
}

/// Parameters of one local model.
#[derive(Clone, Debug, PartialEq)]
pub struct VariationalState<T> {
    /// `z★`, one inducing input per row.
    pub inducing: Matrix<T>,
    /// `m★`
    pub mean: Vec<T>,
    /// Packed lower triangle of `L★`; diagonal entries stored as logs.
    pub chol_packed: Vec<T>,
    pub kernel: KernelParams<T>,
}

impl<T: Scalar> VariationalState<T> {
    /// Builds a state from an explicit lower-triangular factor with positive diagonal.
    pub fn new(inducing: Matrix<T>, mean: Vec<T>, chol: &Matrix<T>, kernel: KernelParams<T>) -> Result<Self> {
        let m = inducing.rows();
        if m == 0 {
            return Err(Error::config("a local model needs at least one inducing point"));
        }
        if inducing.cols() != kernel.dim() {
            return Err(Error::config(format!(
                "inducing inputs have dimension {} but the kernel has {}",
                inducing.cols(),
                kernel.dim()
            )));
        }
        if mean.len() != m || chol.rows() != m || chol.cols() != m {
            return Err(Error::config("variational mean/factor sizes disagree with the inducing set"));
        }
        let mut chol_packed = Vec::with_capacity(m * (m + 1) / 2);
        for i in 0..m {
            for j in 0..=i {
                let v = chol[(i, j)];
                if i == j {
                    if !(v > T::zero()) {
                        return Err(Error::config("variational factor needs a positive diagonal"));
                    }
                    chol_packed.push(v.ln());
                } else {
                    chol_packed.push(v);
                }
            }
        }
        Ok(VariationalState {
            inducing,
            mean,
            chol_packed,
            kernel,
        })
    }

    pub fn num_inducing(&self) -> usize {
        self.inducing.rows()
    }

    pub fn dim(&self) -> usize {
        self.inducing.cols()
    }

    pub fn layout(&self) -> ParamLayout {
        ParamLayout::new(self.num_inducing(), self.dim())
    }

    /// `L★` with the diagonal exponentiated.
    pub fn chol_factor(&self) -> Matrix<T> {
        let m = self.num_inducing();
        let mut l = Matrix::zeros(m, m);
        for i in 0..m {
            for j in 0..=i {
                let v = self.chol_packed[ParamLayout::packed_index(i, j)];
                l[(i, j)] = if i == j { v.exp() } else { v };
            }
        }
        l
    }

    /// `S★ = L★L★ᵀ`
    pub fn covariance(&self) -> Matrix<T> {
        let l = self.chol_factor();
        l.matmul(&l.transpose())
    }

    pub fn to_flat(&self) -> Vec<T> {
        let layout = self.layout();
        let mut flat = Vec::with_capacity(layout.len());
        flat.extend_from_slice(&self.mean);
        flat.extend_from_slice(&self.chol_packed);
        flat.extend_from_slice(self.inducing.as_slice());
        flat.extend_from_slice(&self.kernel.log_lengthscales);
        flat.push(self.kernel.log_variance);
        flat.push(self.kernel.log_noise_precision);
        flat
    }

    pub fn set_flat(&mut self, flat: &[T]) {
        let layout = self.layout();
        assert_eq!(flat.len(), layout.len(), "flat parameter vector has wrong length");
        self.mean.copy_from_slice(&flat[layout.mean()]);
        self.chol_packed.copy_from_slice(&flat[layout.chol()]);
        self.inducing = Matrix::from_row_major(layout.num_inducing, layout.dim, flat[layout.inducing()].to_vec());
        self.kernel.log_lengthscales.copy_from_slice(&flat[layout.log_lengthscales()]);
        self.kernel.log_variance = flat[layout.log_variance()];
        self.kernel.log_noise_precision = flat[layout.log_noise_precision()];
    }

    pub fn with_flat(&self, flat: &[T]) -> Self {
        let mut s = self.clone();
        s.set_flat(flat);
        s
    }

    /// Reorders inducing points; `S★` is permuted congruently and re-factored.
    pub fn permute_inducing(&self, perm: &[usize]) -> Result<Self> {
        let m = self.num_inducing();
        assert_eq!(perm.len(), m);
        let s = self.covariance();
        let sp = Matrix::from_fn(m, m, |i, j| s[(perm[i], perm[j])]);
        let l = crate::linalg::Cholesky::exact(&sp)
            .ok_or_else(|| Error::numerical("permute_inducing", "permuted covariance lost definiteness"))?;
        let z = Matrix::from_fn(m, self.dim(), |i, d| self.inducing[(perm[i], d)]);
        let mean = perm.iter().map(|&p| self.mean[p]).collect();
        Self::new(z, mean, l.lower(), self.kernel.clone())
    }

    pub fn is_finite(&self) -> bool {
        self.to_flat().iter().all(|v| v.is_finite())
    }
}

/// Flat gradient aligned with [`VariationalState::to_flat`].
#[derive(Clone, Debug, PartialEq)]
pub struct GradientVector<T> {
    pub layout: ParamLayout,
    pub values: Vec<T>,
}

impl<T: Scalar> GradientVector<T> {
    pub fn zeros(layout: ParamLayout) -> Self {
        GradientVector {
            layout,
            values: vec![T::zero(); layout.len()],
        }
    }

    pub fn as_slice(&self) -> &[T] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn scale(&mut self, factor: T) {
        for v in &mut self.values {
            *v = *v * factor;
        }
    }

    pub fn add_assign(&mut self, other: &Self) {
        assert_eq!(self.layout, other.layout);
        for (a, &b) in self.values.iter_mut().zip(&other.values) {
            *a = *a + b;
        }
    }

    /// Zeroes every coordinate outside `keep`.
    pub fn retain(&mut self, keep: &[Range<usize>]) {
        for (i, v) in self.values.iter_mut().enumerate() {
            if !keep.iter().any(|r| r.contains(&i)) {
                *v = T::zero();
            }
        }
    }
}
