use super::kernel::{check_points, cov_matrix, KernelParams};
use crate::error::{Error, Result};
use crate::linalg::{dot, Cholesky, Matrix};
use crate::Scalar;

/// Posterior mean and covariance at the probe points. The covariance is that
/// of a noisy observation: the nugget `1/β` sits on its diagonal.
#[derive(Clone, Debug)]
pub struct ExactPosterior<T> {
    pub mean: Vec<T>,
    pub cov: Matrix<T>,
}

impl<T: Scalar> ExactPosterior<T> {
    pub fn variances(&self) -> Vec<T> {
        self.cov.diagonal()
    }
}

struct Conditioned<T> {
    chol: Cholesky<T>,
    alpha: Vec<T>,
}

fn condition<T: Scalar>(x: &Matrix<T>, y: &[T], kernel: &KernelParams<T>) -> Result<Conditioned<T>> {
    check_points(x, kernel.dim(), "training inputs")?;
    if x.rows() != y.len() {
        return Err(Error::config(format!(
            "{} training inputs but {} responses",
            x.rows(),
            y.len()
        )));
    }
    let mut gram = cov_matrix(x, x, kernel)?;
    gram.add_diagonal(kernel.noise_variance());
    let chol = Cholesky::jittered(&gram, kernel.variance(), "exact GP Gram matrix")?;
    let alpha = chol.solve(y);
    Ok(Conditioned { chol, alpha })
}

/// Zero-mean GP conditioning on noisy observations.
pub fn exact_posterior<T: Scalar>(
    x: &Matrix<T>,
    y: &[T],
    kernel: &KernelParams<T>,
    probes: &Matrix<T>,
) -> Result<ExactPosterior<T>> {
    let cond = condition(x, y, kernel)?;
    check_points(probes, kernel.dim(), "probe points")?;
    let cross = cov_matrix(x, probes, kernel)?; // n × s
    let s = probes.rows();
    let n = x.rows();
    let mut mean = Vec::with_capacity(s);
    // V = L⁻¹ Σ(X, X*), column per probe
    let mut v = Matrix::zeros(s, n);
    let mut col = vec![T::zero(); n];
    for j in 0..s {
        for (i, c) in col.iter_mut().enumerate() {
            *c = cross[(i, j)];
        }
        mean.push(dot(&col, &cond.alpha));
        v.row_mut(j).copy_from_slice(&cond.chol.solve_lower(&col));
    }
    let mut cov = cov_matrix(probes, probes, kernel)?;
    cov.add_diagonal(kernel.noise_variance());
    for i in 0..s {
        for j in 0..=i {
            let c = cov[(i, j)] - dot(v.row(i), v.row(j));
            cov[(i, j)] = c;
            cov[(j, i)] = c;
        }
    }
    Ok(ExactPosterior { mean, cov })
}

/// `log N(y | 0, Σ(X,X) + β⁻¹I)`.
pub fn log_marginal<T: Scalar>(x: &Matrix<T>, y: &[T], kernel: &KernelParams<T>) -> Result<T> {
    let cond = condition(x, y, kernel)?;
    let half = T::of(0.5);
    let n = T::of_usize(y.len());
    Ok(-half * dot(y, &cond.alpha) - half * cond.chol.log_det() - half * n * (T::of(2.0) * T::PI()).ln())
}
