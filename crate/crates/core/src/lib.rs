//! Partitioned sparse variational Gaussian processes.
//!
//! Data are split into spatially contiguous partitions, each with its own
//! sparse variational GP. A partition's model is trained by SGD on
//! mini-batches drawn mostly from its own data and, with probability governed
//! by `delta`, from its neighbors' data. `delta = 0` gives fully independent
//! local models; `delta = 1` trains each model on its whole neighborhood.
//! Neighbor batches travel point-to-point between workers through a pluggable
//! [`fabric::Transport`].
//!
//! The numerical core is generic over [`Scalar`] (`f32`/`f64`); the aliases
//! below fix it to `f64`, which the CLI and wire format use.

pub mod error;
pub mod experiment;
pub mod fabric;
pub mod gp_math;
pub mod linalg;
pub mod partition;
mod scalar;
pub mod sgd;
pub mod svgp;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Matrix = linalg::Matrix<f64>;
pub type KernelParams = gp_math::KernelParams<f64>;
pub type VariationalState = svgp::VariationalState<f64>;
pub type GradientVector = svgp::GradientVector<f64>;
pub type PartitionData = partition::PartitionData<f64>;
pub type GridPartition = partition::GridPartition<f64>;
pub type AdamState = sgd::AdamState<f64>;
pub type TrainSettings = sgd::TrainSettings<f64>;
