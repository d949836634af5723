//! Joint Gibbs sampling of the two-stage IV system.
//!
//! Each stage's ensemble is updated against a pseudo-outcome that removes
//! the part of its error explained by the other stage's current residual,
//! with the matching conditional variance per observation.

mod draws;
mod model;
mod sampler;
mod spec;

pub use draws::{
    partial_dependence, read_draws, rho_diagnostics, split_rhat, summarize_draws, write_draws, ChainScalarSummary, Draw, DrawsHeader,
    PdPoint, PdSummary, PosteriorDraws, RhoDiagnostics, RhoDraw, ScalarSummary, DRAWS_SCHEMA,
};
pub use model::{F2Model, F2Snapshot};
pub use sampler::{fit, stage1_pseudo_outcome, stage2_pseudo_outcome, update_beta, IVModelState, McmcConfig, PdRequest};
pub use spec::{DpmSettings, ErrorModel, IVData, ModelSpec, Variant};
