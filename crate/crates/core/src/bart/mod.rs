//! Tree ensembles: leaf priors and conjugate updates, the `k` calibration
//! rule, and the backfitting sweep (constant or line leaves).

mod backfit;
mod ensemble;
mod leaf;

pub use backfit::{BackfitSampler, MoveCounts, WeightedResiduals};
pub use ensemble::{Ensemble, LeafPrior};
pub use leaf::{
    leaf_posterior, leaf_prior_scale, linear_leaf_posterior, log_marginal_leaf, LeafPriorSpec, LineLeafStats,
    LinePosterior, ScalarLeafStats,
};
