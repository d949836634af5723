//! Dirichlet-process mixture of zero-mean bivariate normals for the error
//! pair, with an inverse-Wishart base measure.
//!
//! Assignments are resampled one observation at a time: an existing cluster
//! `c` is chosen with weight `n_{-i,c} N2(e_i; 0, Σ_c)` and a fresh cluster
//! with weight `α ∫ N2(e_i; 0, Σ) dF0(Σ)`, the latter being a bivariate
//! Student-t. Concentration updates use the Escobar–West auxiliary variable.

use rand::Rng;
use rand_distr::{Beta, Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::covariance::{IWPrior, Sym2};
use crate::error::{Error, Result};

/// Gamma(shape, rate) prior on α plus the base measure.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DPMHyper {
    pub alpha_shape: f64,
    pub alpha_rate: f64,
    pub base: IWPrior,
    /// When false α stays at its initial value.
    pub update_alpha: bool,
}

impl DPMHyper {
    pub fn with_base(base: IWPrior) -> Self {
        Self { alpha_shape: 2.0, alpha_rate: 2.0, base, update_alpha: true }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha_shape > 0.0 && self.alpha_rate > 0.0) {
            return Err(Error::Config("alpha prior shape and rate must be positive".into()));
        }
        self.base.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cluster {
    pub sigma: Sym2,
    pub size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DPMState {
    pub assignments: Vec<usize>,
    pub clusters: Vec<Cluster>,
    pub alpha: f64,
    pub base: IWPrior,
}

/// Density at `e` of a zero-mean normal whose covariance is integrated
/// against `IW(dof, S)`: a bivariate Student-t with `dof - 1` degrees of
/// freedom and scale `S / (dof - 1)`.
pub fn new_cluster_marginal(e: [f64; 2], base: &IWPrior) -> f64 {
    log_new_cluster_marginal(e, base).exp()
}

pub fn log_new_cluster_marginal(e: [f64; 2], base: &IWPrior) -> f64 {
    let nu = base.dof;
    let s = &base.scale;
    ((nu - 1.0) / (2.0 * std::f64::consts::PI)).ln() - 0.5 * s.det().ln()
        - 0.5 * (nu + 1.0) * (1.0 + s.inverse().quad(e)).ln()
}

impl DPMState {
    /// All observations in one cluster with covariance `sigma`.
    pub fn single_cluster(n: usize, sigma: Sym2, alpha: f64, base: IWPrior) -> Self {
        let clusters = if n > 0 { vec![Cluster { sigma, size: n }] } else { Vec::new() };
        Self { assignments: vec![0; n], clusters, alpha, base }
    }

    pub fn n_clusters(&self) -> usize {
        self.clusters.len()
    }

    pub fn sigma_of(&self, i: usize) -> Sym2 {
        self.clusters[self.assignments[i]].sigma
    }

    pub fn check(&self) -> Result<()> {
        let mut sizes = vec![0usize; self.clusters.len()];
        for &a in &self.assignments {
            if a >= self.clusters.len() {
                return Err(Error::Invariant(format!("assignment {a} out of range")));
            }
            sizes[a] += 1;
        }
        for (c, (cl, &s)) in self.clusters.iter().zip(&sizes).enumerate() {
            if s == 0 || cl.size != s {
                return Err(Error::Invariant(format!("cluster {c} has recorded size {} but {s} members", cl.size)));
            }
            if !cl.sigma.is_spd() {
                return Err(Error::Invariant(format!("cluster {c} covariance is not SPD")));
            }
        }
        Ok(())
    }

    /// One Gibbs pass over the assignments.
    pub fn assignment_sweep<R: Rng + ?Sized>(&mut self, errors: &[[f64; 2]], rng: &mut R) {
        assert_eq!(errors.len(), self.assignments.len(), "one error pair per observation");
        // slots may be freed mid-sweep; compacted at the end
        let mut slots: Vec<Option<Cluster>> = self.clusters.drain(..).map(Some).collect();
        let mut cache: Vec<(f64, Sym2)> = slots
            .iter()
            .map(|c| {
                let s = c.expect("live").sigma;
                (-0.5 * s.det().ln(), s.inverse())
            })
            .collect();
        let mut free: Vec<usize> = Vec::new();
        let log_alpha = self.alpha.ln();
        let mut logw: Vec<f64> = Vec::new();
        let mut ids: Vec<usize> = Vec::new();

        for (i, &e) in errors.iter().enumerate() {
            let c = self.assignments[i];
            let cl = slots[c].as_mut().expect("assigned cluster is live");
            cl.size -= 1;
            if cl.size == 0 {
                slots[c] = None;
                free.push(c);
            }

            logw.clear();
            ids.clear();
            for (k, slot) in slots.iter().enumerate() {
                if let Some(cl) = slot {
                    let (half_logdet_inv, inv) = &cache[k];
                    logw.push((cl.size as f64).ln() - std::f64::consts::LN_2 - std::f64::consts::PI.ln() + half_logdet_inv - 0.5 * inv.quad(e));
                    ids.push(k);
                }
            }
            logw.push(log_alpha + log_new_cluster_marginal(e, &self.base));
            let pick = sample_log_weights(&logw, rng);

            if pick < ids.len() {
                let k = ids[pick];
                slots[k].as_mut().expect("live").size += 1;
                self.assignments[i] = k;
            } else {
                let sigma = self.base.posterior(1, &Sym2::outer(e)).sample(rng);
                let entry = (-0.5 * sigma.det().ln(), sigma.inverse());
                let cl = Some(Cluster { sigma, size: 1 });
                let k = if let Some(k) = free.pop() {
                    slots[k] = cl;
                    cache[k] = entry;
                    k
                } else {
                    slots.push(cl);
                    cache.push(entry);
                    slots.len() - 1
                };
                self.assignments[i] = k;
            }
        }

        let mut remap = vec![usize::MAX; slots.len()];
        for (k, slot) in slots.into_iter().enumerate() {
            if let Some(cl) = slot {
                remap[k] = self.clusters.len();
                self.clusters.push(cl);
            }
        }
        for a in &mut self.assignments {
            *a = remap[*a];
        }
    }

    /// Redraw every cluster covariance from its conjugate posterior.
    pub fn cluster_param_sweep<R: Rng + ?Sized>(&mut self, errors: &[[f64; 2]], rng: &mut R) {
        let mut scatter = vec![Sym2::new(0.0, 0.0, 0.0); self.clusters.len()];
        for (&a, &e) in self.assignments.iter().zip(errors) {
            scatter[a] = scatter[a].add(&Sym2::outer(e));
        }
        for (cl, sc) in self.clusters.iter_mut().zip(&scatter) {
            cl.sigma = self.base.posterior(cl.size, sc).sample(rng);
        }
    }

    /// Escobar–West update of the concentration parameter.
    pub fn alpha_update<R: Rng + ?Sized>(&mut self, hyper: &DPMHyper, rng: &mut R) -> f64 {
        if hyper.update_alpha {
            self.alpha = sample_alpha(self.alpha, self.n_clusters(), self.assignments.len(), hyper, rng);
        }
        self.alpha
    }
}

/// Draw α | k clusters, n observations via η ~ Beta(α + 1, n) and a
/// two-component Gamma mixture.
pub fn sample_alpha<R: Rng + ?Sized>(alpha: f64, k: usize, n: usize, hyper: &DPMHyper, rng: &mut R) -> f64 {
    if n == 0 {
        return Gamma::new(hyper.alpha_shape, 1.0 / hyper.alpha_rate).expect("gamma").sample(rng);
    }
    let eta: f64 = Beta::new(alpha + 1.0, n as f64).expect("beta").sample(rng);
    let rate = hyper.alpha_rate - eta.ln();
    let a = hyper.alpha_shape;
    let k = k as f64;
    let odds = (a + k - 1.0) / (n as f64 * rate);
    let w = odds / (1.0 + odds);
    let shape = if rng.random::<f64>() < w { a + k } else { a + k - 1.0 };
    Gamma::new(shape, 1.0 / rate).expect("gamma").sample(rng)
}

fn sample_log_weights<R: Rng + ?Sized>(logw: &[f64], rng: &mut R) -> usize {
    let max = logw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let total: f64 = logw.iter().map(|w| (w - max).exp()).sum();
    let mut u = rng.random::<f64>() * total;
    for (k, w) in logw.iter().enumerate() {
        u -= (w - max).exp();
        if u <= 0.0 {
            return k;
        }
    }
    logw.len() - 1
}
