//! The sparse variational GP local model.
//!
//! A [`VariationalState`] holds `q(u) = N(m★, L★L★ᵀ)` over the inducing
//! outputs, the inducing inputs `z★` and the kernel hyperparameters. The
//! per-observation objective is
//!
//! ```text
//! ℓ(x, y) = log N(y | kᵀK⁻¹m★, β⁻¹) − ½(β k̃ + tr(S★Λ)) − KL(q ‖ N(0, K_mm)) / n_total
//! ```
//!
//! with `k̃ = σ²_f − kᵀK⁻¹k` and `Λ = β(K⁻¹k)(K⁻¹k)ᵀ`. Gradients are analytic
//! and flattened in the order documented on [`ParamLayout`].

mod checkpoint;
mod elbo;
mod init;
mod predict;
mod state;

pub use checkpoint::{read_state, read_state_file, write_state, write_state_file};
pub use elbo::{elbo, elbo_grad, elbo_gradient_weighted, elbo_term, elbo_value_and_grad, ElboWorkspace, ObservationTerms};
pub use init::initialize;
pub use predict::{predict, Prediction};
pub use state::{GradientVector, ParamLayout, VariationalState};
