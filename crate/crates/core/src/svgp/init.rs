use rand::seq::index;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::gp_math::KernelParams;
use crate::linalg::Matrix;
use crate::Scalar;

use super::elbo::ElboWorkspace;
use super::state::VariationalState;

/// Starting point for a local model fitted to `coords`/`responses`.
///
/// Inducing inputs are a uniform subsample of the data; with fewer points than
/// `num_inducing` every point is used once and the remainder are jittered
/// resamples. `m★ = 0`, `L★ = ½ chol(K_mm)`, lengthscales are 0.3× the per-axis
/// range, `σ²_f` the sample variance of the responses and `β = 100/σ²_f`.
pub fn initialize<T: Scalar, R: Rng + ?Sized>(
    coords: &Matrix<T>,
    responses: &[T],
    num_inducing: usize,
    rng: &mut R,
) -> Result<VariationalState<T>> {
    let n = coords.rows();
    let d = coords.cols();
    if n == 0 || responses.len() != n {
        return Err(Error::config("cannot initialize a model without data"));
    }
    if num_inducing == 0 {
        return Err(Error::config("num_inducing must be at least 1"));
    }

    let ranges: Vec<T> = (0..d)
        .map(|j| {
            let (lo, hi) = (0..n).fold((T::infinity(), T::neg_infinity()), |(lo, hi), i| {
                (lo.min(coords[(i, j)]), hi.max(coords[(i, j)]))
            });
            hi - lo
        })
        .collect();
    let widest = ranges.iter().copied().fold(T::zero(), T::max);
    let fallback = if widest > T::zero() { widest } else { T::one() };
    let ranges: Vec<T> = ranges
        .into_iter()
        .map(|r| if r > T::zero() { r } else { fallback })
        .collect();

    let mut rows: Vec<usize> = if n >= num_inducing {
        index::sample(rng, n, num_inducing).into_vec()
    } else {
        (0..n).collect()
    };
    let mut inducing = Matrix::from_fn(num_inducing.min(n), d, |i, j| coords[(rows[i], j)]);
    if n < num_inducing {
        let mut extra = Vec::with_capacity((num_inducing - n) * d);
        for _ in n..num_inducing {
            let src = rng.random_range(0..n);
            rows.push(src);
            for (j, &r) in ranges.iter().enumerate() {
                let e: f64 = StandardNormal.sample(rng);
                extra.push(coords[(src, j)] + T::of(1e-2 * e) * r);
            }
        }
        let mut data = inducing.into_vec();
        data.extend(extra);
        inducing = Matrix::from_row_major(num_inducing, d, data);
    }

    let mean_y = responses.iter().copied().sum::<T>() / T::of_usize(n);
    let variance = if n > 1 {
        responses.iter().map(|&y| (y - mean_y) * (y - mean_y)).sum::<T>() / T::of_usize(n - 1)
    } else {
        T::zero()
    };
    let variance = if variance > T::of(1e-12) && variance.is_finite() {
        variance
    } else {
        T::one()
    };
    let lengthscales: Vec<T> = ranges.iter().map(|&r| T::of(0.3) * r).collect();
    let kernel = KernelParams::new(&lengthscales, variance, T::of(100.0) / variance)?;

    let provisional = VariationalState::new(
        inducing,
        vec![T::zero(); num_inducing],
        &Matrix::identity(num_inducing),
        kernel,
    )?;
    let ws = ElboWorkspace::new(&provisional)?;
    let half = T::of(0.5);
    let l = ws.kmm_chol.lower();
    let scaled = Matrix::from_fn(num_inducing, num_inducing, |i, j| half * l[(i, j)]);
    VariationalState::new(provisional.inducing, provisional.mean, &scaled, provisional.kernel)
}
