use std::sync::Arc;

use rand::Rng;
use rand_distr::{ChiSquared, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared as ChiSquaredDist, ContinuousCDF};

use super::draws::{Draw, PdPoint, PosteriorDraws, RhoDraw};
use super::model::{F2Model, F2Snapshot};
use super::spec::{ErrorModel, IVData, ModelSpec, Variant};
use crate::bart::{leaf_prior_scale, BackfitSampler, LeafPrior, LeafPriorSpec, WeightedResiduals};
use crate::covariance::{update_sigma_iw, IWPrior, Sym2};
use crate::dpm::{DPMHyper, DPMState};
use crate::error::{input, Error, Result};
use crate::rng::stream;
use crate::scalar::Scalar;
use crate::treekit::{BinnedDesign, CutpointGrid, TreePriorConfig};
use crate::tsls::ols_residual_variance;
use crate::Ensemble;

/// Degrees of freedom and tail quantile of the plain-BART variance prior.
const SIGMA_NU: f64 = 3.0;
const SIGMA_Q: f64 = 0.9;

/// `(t*, v)`: the exposure with the outcome-error contribution removed, and
/// its conditional variance.
pub fn stage1_pseudo_outcome(t: f64, y: f64, f2: f64, sigma: &Sym2) -> Result<(f64, f64)> {
    if !(sigma.yy > 0.0) {
        return Err(Error::Invariant(format!("outcome error variance {} is not positive", sigma.yy)));
    }
    let c = sigma.ty / sigma.yy;
    Ok((t - c * (y - f2), sigma.tt - sigma.ty * c))
}

/// `(y*, w)`: the outcome with the exposure-error contribution removed, and
/// its conditional variance.
pub fn stage2_pseudo_outcome(t: f64, y: f64, f1: f64, sigma: &Sym2) -> Result<(f64, f64)> {
    if !(sigma.tt > 0.0) {
        return Err(Error::Invariant(format!("exposure error variance {} is not positive", sigma.tt)));
    }
    let c = sigma.ty / sigma.tt;
    Ok((y - c * (t - f1), sigma.yy - sigma.ty * c))
}

/// Draw the exposure coefficient of `r_i = beta t_i + e_i`, `e_i ~ N(0, w_i)`,
/// under a `N(0, prior_sd^2)` prior.
pub fn update_beta<R: Rng + ?Sized>(t: &[f64], r: &[f64], w: &[f64], prior_sd: f64, rng: &mut R) -> f64 {
    let (mut prec, mut b) = (1.0 / (prior_sd * prior_sd), 0.0);
    for ((&ti, &ri), &wi) in t.iter().zip(r).zip(w) {
        prec += ti * ti / wi;
        b += ti * ri / wi;
    }
    b / prec + f64::standard_normal(rng) / prec.sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct McmcConfig {
    pub burn_in: usize,
    pub draws: usize,
    pub chains: usize,
    pub seed: u64,
    pub thin: usize,
    /// Keep every retained draw's outcome function in memory.
    pub keep_models: bool,
    /// Record per-observation correlations under the mixture error model.
    pub rho_per_obs: bool,
}

impl Default for McmcConfig {
    fn default() -> Self {
        Self { burn_in: 500, draws: 500, chains: 1, seed: 1, thin: 1, keep_models: false, rho_per_obs: true }
    }
}

/// Points at which each retained draw's partial dependence is recorded:
/// every exposure value in `t_grid` crossed with every profile of the
/// covariates listed in `fixed_x`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PdRequest {
    pub t_grid: Vec<f64>,
    pub fixed_x: Vec<usize>,
    pub x_profiles: Vec<Vec<f64>>,
}

impl PdRequest {
    fn points(&self) -> Vec<(f64, Vec<f64>)> {
        let profiles = if self.x_profiles.is_empty() { vec![Vec::new()] } else { self.x_profiles.clone() };
        profiles.iter().flat_map(|p| self.t_grid.iter().map(move |&t| (t, p.clone()))).collect()
    }
}

/// Points, fixed covariate indices and background rows.
type PdArgs<'a> = (&'a [(f64, Vec<f64>)], &'a [usize], &'a [Vec<f64>]);

#[derive(Debug, Clone)]
struct Component {
    ensemble: Ensemble,
    sampler: BackfitSampler,
}

impl Component {
    fn new(columns: &[Vec<f64>], n: usize, n_trees: usize, prior: LeafPrior<f64>, n_cuts: usize) -> Result<Self> {
        let grid = Arc::new(CutpointGrid::from_columns(columns, n_cuts)?);
        let design = if columns.is_empty() { BinnedDesign::empty(n) } else { BinnedDesign::new(columns, &grid)? };
        let ensemble = Ensemble::new(n_trees, prior, grid)?;
        let sampler = BackfitSampler::new(&ensemble, design)?;
        Ok(Self { ensemble, sampler })
    }

    fn sweep<R: Rng + ?Sized>(&mut self, wr: &mut WeightedResiduals<f64>, exposure: Option<&[f64]>, cfg: &TreePriorConfig, rng: &mut R) -> Result<()> {
        self.sampler.backfit_sweep(&mut self.ensemble, wr, exposure, cfg, rng)
    }
}

#[derive(Debug, Clone)]
enum F2State {
    Joint(Component),
    Additive { exposure: Component, covariates: Component },
    LineLeaves(Component),
    Linear { beta: f64, beta_sd: f64, covariates: Component },
}

#[derive(Debug, Clone)]
enum ErrorState {
    Single { sigma: Sym2, prior: IWPrior },
    Mixture { state: DPMState, hyper: DPMHyper },
    Scalar { sigma2: f64, lambda: f64 },
}

/// One chain's Gibbs state.
#[derive(Debug, Clone)]
pub struct IVModelState {
    variant: Variant,
    tree_prior: TreePriorConfig,
    y: Vec<f64>,
    t: Vec<f64>,
    t_offset: f64,
    y_offset: f64,
    f1: Option<Component>,
    f1_fit: Vec<f64>,
    f2: F2State,
    f2_fit: Vec<f64>,
    errors: ErrorState,
    target: Vec<f64>,
    work: WeightedResiduals<f64>,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn sample_variance(v: &[f64]) -> f64 {
    let m = mean(v);
    v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len().max(2) - 1) as f64
}

fn range(v: &[f64]) -> f64 {
    let (lo, hi) = v.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
    hi - lo
}

impl IVModelState {
    /// Root-only zero ensembles, `beta = 0`, and error variances at the OLS
    /// residual variances of the two stages.
    pub fn new(data: &IVData, spec: &ModelSpec) -> Result<Self> {
        spec.validate()?;
        let variant = spec.variant;
        data.validate(variant.uses_instruments())?;
        let n = data.n();
        let (range_t, range_y) = (range(&data.t), range(&data.y));
        if !(range_y > 0.0) {
            return input("outcome is constant");
        }
        if !(range_t > 0.0) {
            return input("exposure is constant");
        }

        let var_t = ols_residual_variance(&data.t, &data.z).unwrap_or_else(|_| sample_variance(&data.t));
        let mut stage2_cols = vec![data.t.clone()];
        stage2_cols.extend(data.x.iter().cloned());
        let var_y = ols_residual_variance(&data.y, &stage2_cols).unwrap_or_else(|_| sample_variance(&data.y));
        if !(var_t > 0.0 && var_y > 0.0) {
            return input("residual variance pre-pass produced a non-positive variance");
        }

        let scale_for = |range: f64, k: f64, h: usize| leaf_prior_scale(&LeafPriorSpec { k, data_range: range, n_trees: h });
        let f1 = if variant.uses_instruments() {
            let prior = LeafPrior::Constant { scale: scale_for(range_t, spec.k_stage1, spec.trees_stage1) };
            Some(Component::new(&data.z, n, spec.trees_stage1, prior, spec.n_cuts)?)
        } else {
            None
        };

        let (k2, h2) = (spec.k_stage2, spec.trees_stage2);
        let constant = LeafPrior::Constant { scale: scale_for(range_y, k2, h2) };
        let ratio = range_y / range_t;
        let f2 = match variant {
            Variant::NpivBartH | Variant::PlainBart => F2State::Joint(Component::new(&stage2_cols, n, h2, constant, spec.n_cuts)?),
            Variant::NpivBartG => F2State::Additive {
                exposure: Component::new(std::slice::from_ref(&data.t), n, h2, constant, spec.n_cuts)?,
                covariates: Component::new(&data.x, n, h2, constant, spec.n_cuts)?,
            },
            Variant::IvBartH => {
                let prior = LeafPrior::Line { intercept_scale: scale_for(range_y, k2, h2), slope_scale: scale_for(ratio, k2, h2) };
                F2State::LineLeaves(Component::new(&data.x, n, h2, prior, spec.n_cuts)?)
            }
            Variant::IvBartG => F2State::Linear {
                beta: 0.0,
                beta_sd: ratio / (2.0 * k2),
                covariates: Component::new(&data.x, n, h2, constant, spec.n_cuts)?,
            },
        };

        let start = Sym2::diag(var_t, var_y);
        let prior = IWPrior::new(spec.iw_dof, start.scale(spec.iw_dof - 3.0))?;
        let errors = match (variant, spec.error_model) {
            (Variant::PlainBart, _) => {
                let q = ChiSquaredDist::new(SIGMA_NU).expect("dof").inverse_cdf(1.0 - SIGMA_Q);
                ErrorState::Scalar { sigma2: var_y, lambda: var_y * q / SIGMA_NU }
            }
            (_, ErrorModel::BivariateNormal) => ErrorState::Single { sigma: start, prior },
            (_, ErrorModel::Dpm) => {
                let hyper = DPMHyper {
                    alpha_shape: spec.dpm.alpha_shape,
                    alpha_rate: spec.dpm.alpha_rate,
                    base: prior,
                    update_alpha: spec.dpm.update_alpha,
                };
                hyper.validate()?;
                ErrorState::Mixture { state: DPMState::single_cluster(n, start, spec.dpm.alpha_init, prior), hyper }
            }
        };

        Ok(Self {
            variant,
            tree_prior: spec.tree_prior,
            y: data.y.clone(),
            t: data.t.clone(),
            t_offset: mean(&data.t),
            y_offset: mean(&data.y),
            f1,
            f1_fit: vec![0.0; n],
            f2,
            f2_fit: vec![0.0; n],
            errors,
            target: vec![0.0; n],
            work: WeightedResiduals { r: vec![0.0; n], v: vec![1.0; n] },
        })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    /// Error covariance of observation `i` (plain BART reports `diag(0, σ²)`).
    pub fn sigma_of(&self, i: usize) -> Sym2 {
        match &self.errors {
            ErrorState::Single { sigma, .. } => *sigma,
            ErrorState::Mixture { state, .. } => state.sigma_of(i),
            ErrorState::Scalar { sigma2, .. } => Sym2::diag(0.0, *sigma2),
        }
    }

    pub fn beta(&self) -> Option<f64> {
        match &self.f2 {
            F2State::Linear { beta, .. } => Some(*beta),
            _ => None,
        }
    }

    pub fn dpm_state(&self) -> Option<&DPMState> {
        match &self.errors {
            ErrorState::Mixture { state, .. } => Some(state),
            _ => None,
        }
    }

    /// In-sample `f1` including the exposure mean.
    pub fn f1_values(&self) -> Vec<f64> {
        self.f1_fit.iter().map(|f| f + self.t_offset).collect()
    }

    /// In-sample `f2` including the outcome mean.
    pub fn f2_values(&self) -> Vec<f64> {
        self.f2_fit.iter().map(|f| f + self.y_offset).collect()
    }

    /// Residual pairs `(t - f1, y - f2)`.
    pub fn residual_pairs(&self) -> Vec<[f64; 2]> {
        (0..self.n())
            .map(|i| [self.t[i] - self.t_offset - self.f1_fit[i], self.y[i] - self.y_offset - self.f2_fit[i]])
            .collect()
    }

    pub fn snapshot(&self) -> F2Snapshot {
        let model = match &self.f2 {
            F2State::Joint(c) => F2Model::Joint { ensemble: c.ensemble.clone() },
            F2State::Additive { exposure, covariates } => {
                F2Model::Additive { exposure: exposure.ensemble.clone(), covariates: covariates.ensemble.clone() }
            }
            F2State::LineLeaves(c) => F2Model::LineLeaves { ensemble: c.ensemble.clone() },
            F2State::Linear { beta, covariates, .. } => F2Model::Linear { beta: *beta, covariates: covariates.ensemble.clone() },
        };
        F2Snapshot { offset: self.y_offset, model }
    }

    /// One full Gibbs scan: `f1`, then `f2`, then the error model.
    pub fn gibbs_iteration<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<()> {
        let n = self.n();
        let cfg = self.tree_prior;
        let mut wr = std::mem::replace(&mut self.work, WeightedResiduals { r: Vec::new(), v: Vec::new() });

        if let Some(mut f1) = self.f1.take() {
            for i in 0..n {
                let s = self.sigma_of(i);
                let c = s.ty / s.yy;
                let target = self.t[i] - c * (self.y[i] - self.y_offset - self.f2_fit[i]) - self.t_offset;
                self.target[i] = target;
                wr.r[i] = target - self.f1_fit[i];
                wr.v[i] = s.tt - s.ty * c;
            }
            let swept = f1.sweep(&mut wr, None, &cfg, rng);
            self.f1 = Some(f1);
            swept?;
            for i in 0..n {
                self.f1_fit[i] = self.target[i] - wr.r[i];
            }
        }

        for i in 0..n {
            let (target, w) = match &self.errors {
                ErrorState::Scalar { sigma2, .. } => (self.y[i] - self.y_offset, *sigma2),
                _ => {
                    let s = self.sigma_of(i);
                    let c = s.ty / s.tt;
                    let et = self.t[i] - self.t_offset - self.f1_fit[i];
                    (self.y[i] - self.y_offset - c * et, s.yy - s.ty * c)
                }
            };
            self.target[i] = target;
            wr.r[i] = target - self.f2_fit[i];
            wr.v[i] = w;
        }
        match &mut self.f2 {
            F2State::Joint(c) => c.sweep(&mut wr, None, &cfg, rng)?,
            F2State::LineLeaves(c) => c.sweep(&mut wr, Some(&self.t), &cfg, rng)?,
            F2State::Additive { exposure, covariates } => {
                exposure.sweep(&mut wr, None, &cfg, rng)?;
                covariates.sweep(&mut wr, None, &cfg, rng)?;
            }
            F2State::Linear { beta, beta_sd, covariates } => {
                covariates.sweep(&mut wr, None, &cfg, rng)?;
                for (r, &t) in wr.r.iter_mut().zip(&self.t) {
                    *r += *beta * t;
                }
                *beta = update_beta(&self.t, &wr.r, &wr.v, *beta_sd, rng);
                for (r, &t) in wr.r.iter_mut().zip(&self.t) {
                    *r -= *beta * t;
                }
            }
        }
        for i in 0..n {
            self.f2_fit[i] = self.target[i] - wr.r[i];
        }
        self.work = wr;

        let pairs = self.residual_pairs();
        match &mut self.errors {
            ErrorState::Single { sigma, prior } => *sigma = update_sigma_iw(&pairs, prior, rng),
            ErrorState::Mixture { state, hyper } => {
                state.assignment_sweep(&pairs, rng);
                state.cluster_param_sweep(&pairs, rng);
                state.alpha_update(hyper, rng);
                #[cfg(debug_assertions)]
                state.check()?;
            }
            ErrorState::Scalar { sigma2, lambda } => {
                let ss: f64 = pairs.iter().map(|e| e[1] * e[1]).sum();
                let chi: f64 = ChiSquared::new(SIGMA_NU + n as f64).expect("dof").sample(rng);
                *sigma2 = (SIGMA_NU * *lambda + ss) / chi;
            }
        }
        Ok(())
    }

    /// Log density of the current residuals under the current error model.
    pub fn log_likelihood(&self) -> f64 {
        let pairs = self.residual_pairs();
        match &self.errors {
            ErrorState::Scalar { sigma2, .. } => pairs
                .iter()
                .map(|e| -0.5 * (2.0 * std::f64::consts::PI * sigma2).ln() - 0.5 * e[1] * e[1] / sigma2)
                .sum(),
            _ => pairs.iter().enumerate().map(|(i, e)| self.sigma_of(i).log_normal_density(*e)).sum(),
        }
    }

    fn record(&self, chain: usize, iteration: usize, pd: Option<PdArgs<'_>>, rho_per_obs: bool) -> Result<Draw> {
        let pd = match pd {
            Some((points, fixed, background)) if !points.is_empty() => self.snapshot().partial_dependence(points, fixed, background)?,
            _ => Vec::new(),
        };
        let (rho, sigma, sigma_yy, n_clusters, alpha) = match &self.errors {
            ErrorState::Single { sigma, .. } => (Some(RhoDraw::Scalar(sigma.rho())), Some(*sigma), None, None, None),
            ErrorState::Mixture { state, .. } => {
                let rhos: Vec<f64> = state.assignments.iter().map(|&a| state.clusters[a].sigma.rho()).collect();
                let rho = if rho_per_obs { RhoDraw::PerObs(rhos) } else { RhoDraw::Scalar(mean(&rhos)) };
                (Some(rho), None, None, Some(state.n_clusters()), Some(state.alpha))
            }
            ErrorState::Scalar { sigma2, .. } => (None, None, Some(*sigma2), None, None),
        };
        Ok(Draw {
            chain,
            iteration,
            beta: self.beta(),
            rho,
            sigma,
            sigma_yy,
            n_clusters,
            alpha,
            log_lik: self.log_likelihood(),
            pd,
        })
    }
}

struct ChainOutput {
    draws: Vec<Draw>,
    models: Vec<F2Snapshot>,
}

fn run_chain(
    data: &IVData,
    spec: &ModelSpec,
    mcmc: &McmcConfig,
    chain: usize,
    pd: Option<PdArgs<'_>>,
) -> Result<ChainOutput> {
    let mut state = IVModelState::new(data, spec)?;
    let mut rng = stream(mcmc.seed, &[chain as u64]);
    let mut out = ChainOutput { draws: Vec::new(), models: Vec::new() };
    for it in 0..mcmc.burn_in + mcmc.draws {
        state.gibbs_iteration(&mut rng)?;
        if it >= mcmc.burn_in && (it - mcmc.burn_in).is_multiple_of(mcmc.thin) {
            out.draws.push(state.record(chain, it - mcmc.burn_in, pd, mcmc.rho_per_obs)?);
            if mcmc.keep_models {
                out.models.push(state.snapshot());
            }
        }
    }
    Ok(out)
}

/// Run `mcmc.chains` independent chains (seeded from the master seed and the
/// chain index) and concatenate their retained draws in chain order.
pub fn fit(data: &IVData, spec: &ModelSpec, mcmc: &McmcConfig, pd: Option<&PdRequest>) -> Result<PosteriorDraws> {
    if mcmc.chains == 0 {
        return input("at least one chain required");
    }
    if mcmc.thin == 0 {
        return input("thin must be at least 1");
    }
    spec.validate()?;
    data.validate(spec.variant.uses_instruments())?;
    let (points, fixed, background) = match pd {
        Some(req) => {
            if let Some(&j) = req.fixed_x.iter().find(|&&j| j >= data.x.len()) {
                return input(format!("partial dependence fixes covariate {j} but data has {} covariates", data.x.len()));
            }
            if req.x_profiles.iter().any(|p| p.len() != req.fixed_x.len()) {
                return input("each covariate profile must give one value per fixed covariate");
            }
            if req.fixed_x.is_empty() && !req.x_profiles.is_empty() && req.x_profiles.len() > 1 {
                return input("several covariate profiles given but no covariates fixed");
            }
            (req.points(), req.fixed_x.clone(), data.x_rows())
        }
        None => (Vec::new(), Vec::new(), Vec::new()),
    };
    let pd_args = (!points.is_empty()).then_some((points.as_slice(), fixed.as_slice(), background.as_slice()));

    let outputs: Vec<ChainOutput> =
        (0..mcmc.chains).into_par_iter().map(|c| run_chain(data, spec, mcmc, c, pd_args)).collect::<Result<_>>()?;

    let (t_lo, t_hi) = data.t.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
    let points = points
        .into_iter()
        .map(|(t, x)| PdPoint { t, x, extrapolated: t < t_lo || t > t_hi })
        .collect();
    let mut draws = Vec::new();
    let mut models = Vec::new();
    for o in outputs {
        draws.extend(o.draws);
        models.extend(o.models);
    }
    Ok(PosteriorDraws { variant: spec.variant, n_obs: data.n(), chains: mcmc.chains, fixed_x: fixed, points, draws, models })
}
