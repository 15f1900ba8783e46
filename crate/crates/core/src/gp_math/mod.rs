//! Covariance functions, the exact GP posterior used as a correctness
//! oracle, and Gaussian random field sampling for synthetic data.
//!
//! Coordinates are passed as `Matrix` values with one point per row.

mod exact;
mod field;
mod kernel;

pub use exact::{exact_posterior, log_marginal, ExactPosterior};
pub use field::sample_grf;
pub use kernel::{cov_matrix, KernelParams};
pub(crate) use kernel::eval_with as kernel_eval;
