use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::Scalar;

/// Anisotropic squared-exponential hyperparameters plus Gaussian noise precision.
///
/// Everything is held on the log scale so the optimizer works unconstrained;
/// the positive quantities are by definition the exponentials of the stored values.
#[derive(Clone, Debug, PartialEq)]
pub struct KernelParams<T> {
    pub log_lengthscales: Vec<T>,
    pub log_variance: T,
    pub log_noise_precision: T,
}

impl<T: Scalar> KernelParams<T> {
    pub fn new(lengthscales: &[T], variance: T, noise_precision: T) -> Result<Self> {
        if lengthscales.is_empty() {
            return Err(Error::config("kernel needs at least one lengthscale"));
        }
        let positive = |v: T| v > T::zero() && v.is_finite();
        if !lengthscales.iter().copied().all(positive) {
            return Err(Error::config("lengthscales must be positive and finite"));
        }
        if !positive(variance) {
            return Err(Error::config("process variance must be positive and finite"));
        }
        if !positive(noise_precision) {
            return Err(Error::config("noise precision must be positive and finite"));
        }
        Ok(KernelParams {
            log_lengthscales: lengthscales.iter().map(|l| l.ln()).collect(),
            log_variance: variance.ln(),
            log_noise_precision: noise_precision.ln(),
        })
    }

    /// Isotropic convenience constructor.
    pub fn isotropic(dim: usize, lengthscale: T, variance: T, noise_precision: T) -> Result<Self> {
        Self::new(&vec![lengthscale; dim], variance, noise_precision)
    }

    pub fn dim(&self) -> usize {
        self.log_lengthscales.len()
    }

    pub fn lengthscales(&self) -> Vec<T> {
        self.log_lengthscales.iter().map(|l| l.exp()).collect()
    }

    pub fn variance(&self) -> T {
        self.log_variance.exp()
    }

    pub fn noise_precision(&self) -> T {
        self.log_noise_precision.exp()
    }

    pub fn noise_variance(&self) -> T {
        T::one() / self.noise_precision()
    }

    /// `1/ℓ_d²` per dimension.
    pub(crate) fn inv_sq_lengthscales(&self) -> Vec<T> {
        let minus_two = T::of(-2.0);
        self.log_lengthscales.iter().map(|&l| (minus_two * l).exp()).collect()
    }

    /// Kernel value for a single pair of points.
    pub fn eval(&self, a: &[T], b: &[T]) -> T {
        eval_with(self.variance(), &self.inv_sq_lengthscales(), a, b)
    }
}

#[inline]
pub(crate) fn eval_with<T: Scalar>(variance: T, inv_sq: &[T], a: &[T], b: &[T]) -> T {
    let mut r2 = T::zero();
    for ((&x, &z), &w) in a.iter().zip(b).zip(inv_sq) {
        let d = x - z;
        r2 = r2 + d * d * w;
    }
    variance * (T::of(-0.5) * r2).exp()
}

pub(crate) fn check_points<T: Scalar>(points: &Matrix<T>, dim: usize, what: &str) -> Result<()> {
    if points.rows() == 0 {
        return Err(Error::config(format!("{what} is empty")));
    }
    if points.cols() != dim {
        return Err(Error::config(format!(
            "{what} has dimension {} but the kernel has {dim} lengthscales",
            points.cols()
        )));
    }
    Ok(())
}

/// Cross-covariance `Σ(X1, X2)`; entry (i, j) is `σ²_f·exp(−½ Σ_d (X1[i,d] − X2[j,d])²/ℓ_d²)`.
pub fn cov_matrix<T: Scalar>(x1: &Matrix<T>, x2: &Matrix<T>, kernel: &KernelParams<T>) -> Result<Matrix<T>> {
    check_points(x1, kernel.dim(), "first coordinate list")?;
    check_points(x2, kernel.dim(), "second coordinate list")?;
    let variance = kernel.variance();
    let inv_sq = kernel.inv_sq_lengthscales();
    Ok(Matrix::from_fn(x1.rows(), x2.rows(), |i, j| {
        eval_with(variance, &inv_sq, x1.row(i), x2.row(j))
    }))
}
