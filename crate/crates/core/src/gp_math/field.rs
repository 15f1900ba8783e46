use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::kernel::{cov_matrix, KernelParams};
use crate::error::Result;
use crate::linalg::{dot, Cholesky, Matrix};
use crate::Scalar;

/// One draw from `N(0, Σ(grid, grid) + β⁻¹I)` via a dense Cholesky factor.
/// Intended for grids of at most a few thousand points.
pub fn sample_grf<T: Scalar>(grid: &Matrix<T>, kernel: &KernelParams<T>, seed: u64) -> Result<Vec<T>> {
    let mut cov = cov_matrix(grid, grid, kernel)?;
    cov.add_diagonal(kernel.noise_variance());
    let chol = Cholesky::jittered(&cov, kernel.variance(), "random field covariance")?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z: Vec<T> = (0..grid.rows())
        .map(|_| {
            let v: f64 = StandardNormal.sample(&mut rng);
            T::of(v)
        })
        .collect();
    let l = chol.lower();
    Ok((0..grid.rows()).map(|i| dot(&l.row(i)[..=i], &z[..=i])).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(n: usize) -> Matrix<f64> {
        Matrix::from_fn(n, 1, |i, _| i as f64 / n as f64)
    }

    #[test]
    fn same_seed_same_draw() {
        let k = KernelParams::isotropic(1, 0.2, 1.0, 25.0).unwrap();
        let a = sample_grf(&line(30), &k, 17).unwrap();
        let b = sample_grf(&line(30), &k, 17).unwrap();
        assert_eq!(
            a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
        assert_ne!(a, sample_grf(&line(30), &k, 18).unwrap());
    }

    #[test]
    fn monte_carlo_mean_and_variance() {
        let k = KernelParams::isotropic(1, 0.2, 1.0, 25.0).unwrap();
        let total: f64 = 1.0 + 1.0 / 25.0;
        let grid = line(10);
        let at = 4;
        let draws: Vec<f64> = (0..500).map(|s| sample_grf(&grid, &k, s).unwrap()[at]).collect();
        let mean200 = draws[..200].iter().sum::<f64>() / 200.0;
        assert!(mean200.abs() < 3.0 * total.sqrt() / 200f64.sqrt(), "mean {mean200}");
        let mean = draws.iter().sum::<f64>() / 500.0;
        let var = draws.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 499.0;
        assert!((var - total).abs() < 0.2 * total, "var {var}");
    }
}
