use crate::error::{Error, Result};
use crate::linalg::{dot, Matrix};
use crate::Scalar;

use super::elbo::ElboWorkspace;
use super::state::VariationalState;

/// Predictive moments at a set of points.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction<T> {
    pub mean: Vec<T>,
    /// Variance of the latent function.
    pub latent_var: Vec<T>,
}

impl<T: Scalar> Prediction<T> {
    /// Variance of a noisy observation, `latent + 1/β`.
    pub fn observed_var(&self, state: &VariationalState<T>) -> Vec<T> {
        let noise = state.kernel.noise_variance();
        self.latent_var.iter().map(|&v| v + noise).collect()
    }
}

/// `mean = k*ᵀK⁻¹m★`, `var = k** − k*ᵀK⁻¹k* + k*ᵀK⁻¹S★K⁻¹k*`.
pub fn predict<T: Scalar>(state: &VariationalState<T>, points: &Matrix<T>) -> Result<Prediction<T>> {
    if points.rows() > 0 && points.cols() != state.dim() {
        return Err(Error::config(format!(
            "prediction points have dimension {} but the model has {}",
            points.cols(),
            state.dim()
        )));
    }
    let ws = ElboWorkspace::new(state)?;
    let variance = state.kernel.variance();
    let mut mean = Vec::with_capacity(points.rows());
    let mut latent_var = Vec::with_capacity(points.rows());
    for i in 0..points.rows() {
        let obs = ws.observation(state, points.row(i));
        mean.push(obs.mean);
        let v = variance - dot(&obs.k, &obs.a) + dot(&obs.a, &obs.s_a);
        latent_var.push(v.max(T::zero()));
    }
    Ok(Prediction { mean, latent_var })
}
