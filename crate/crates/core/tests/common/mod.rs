#![allow(dead_code)]

use psvgp::gp_math::KernelParams;
use psvgp::linalg::Matrix;
use psvgp::svgp::VariationalState;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Uniform inputs on the unit square with a smooth response plus noise.
pub fn random_data(n: usize, d: usize, rng: &mut ChaCha8Rng) -> (Matrix<f64>, Vec<f64>) {
    let x = Matrix::from_fn(n, d, |_, _| rng.random::<f64>());
    let y = (0..n)
        .map(|i| (3.0 * x[(i, 0)]).sin() + 0.1 * normal(rng))
        .collect();
    (x, y)
}

/// A generic (not optimized) state: random inducing inputs, mean, factor and kernel.
pub fn random_state(m: usize, d: usize, rng: &mut ChaCha8Rng) -> VariationalState<f64> {
    let z = Matrix::from_fn(m, d, |_, _| rng.random::<f64>());
    let mean = (0..m).map(|_| normal(rng)).collect();
    let l = Matrix::from_fn(m, m, |i, j| {
        if i == j {
            0.2 + rng.random::<f64>()
        } else if j < i {
            0.3 * normal(rng)
        } else {
            0.0
        }
    });
    let ls: Vec<f64> = (0..d).map(|_| 0.2 + 0.4 * rng.random::<f64>()).collect();
    let k = KernelParams::new(&ls, 0.5 + rng.random::<f64>(), 5.0 + 20.0 * rng.random::<f64>()).unwrap();
    VariationalState::new(z, mean, &l, k).unwrap()
}

/// Batch objective `Σ_i ℓ_i` summed term by term through the public scalar API.
pub fn batch_objective(x: &Matrix<f64>, y: &[f64], state: &VariationalState<f64>, n_total: f64) -> f64 {
    (0..y.len())
        .map(|i| psvgp::svgp::elbo_term(x.row(i), y[i], state, n_total).unwrap())
        .sum()
}

/// Central differences of `batch_objective` in the flat parameterization.
pub fn finite_difference(
    x: &Matrix<f64>,
    y: &[f64],
    state: &VariationalState<f64>,
    n_total: f64,
    step: f64,
) -> Vec<f64> {
    let base = state.to_flat();
    (0..base.len())
        .map(|c| {
            let mut plus = base.clone();
            plus[c] += step;
            let mut minus = base.clone();
            minus[c] -= step;
            let fp = batch_objective(x, y, &state.with_flat(&plus), n_total);
            let fm = batch_objective(x, y, &state.with_flat(&minus), n_total);
            (fp - fm) / (2.0 * step)
        })
        .collect()
}

pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> (f64, usize) {
    analytic
        .iter()
        .zip(numeric)
        .enumerate()
        .map(|(i, (&a, &n))| ((a - n).abs() / a.abs().max(1.0), i))
        .fold((0.0, 0), |acc, v| if v.0 > acc.0 { v } else { acc })
}
