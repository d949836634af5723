//! Bayesian instrumental-variable regression with additive regression-tree
//! ensembles.
//!
//! The two-stage system `t = f1(z) + e_t`, `y = f2(t, x) + e_y` with
//! correlated errors is sampled jointly by Gibbs: each stage's tree ensemble
//! is updated by Bayesian backfitting against pseudo-outcomes that condition
//! on the other stage's residual, and the error covariance is drawn from an
//! inverse-Wishart or a Dirichlet-process mixture of inverse-Wisharts.
//!
//! Tree and leaf arithmetic is generic over [`Scalar`] (`f32` / `f64`); the
//! aliases below fix the `f64` instantiation used by the IV samplers.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod bart;
pub mod covariance;
pub mod dpm;
pub mod error;
pub mod ivmodels;
pub mod rng;
pub mod scalar;
pub mod simlab;
pub mod treekit;
pub mod tsls;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tree = treekit::RegressionTree<f64>;
pub type Tree32 = treekit::RegressionTree<f32>;
pub type Grid = treekit::CutpointGrid<f64>;
pub type Ensemble = bart::Ensemble<f64>;
pub type Ensemble32 = bart::Ensemble<f32>;
pub type Residuals = bart::WeightedResiduals<f64>;
