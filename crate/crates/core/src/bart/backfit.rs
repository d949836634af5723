//! Bayesian backfitting: one MH structural move plus a Gibbs redraw of the
//! leaves, tree by tree, against the partial residual of the other trees.

use rand::Rng;

use super::ensemble::{Ensemble, LeafPrior};
use super::leaf::{ConstantLeaves, LeafModel, LineLeaves};
use crate::error::{input, Error, Result};
use crate::scalar::Scalar;
use crate::treekit::{propose_move, BinnedDesign, Membership, MoveKind, MoveOutcome, TreePriorConfig};

/// Partial residuals and their per-observation noise variances.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedResiduals<S> {
    pub r: Vec<S>,
    pub v: Vec<S>,
}

impl<S: Scalar> WeightedResiduals<S> {
    pub fn new(r: Vec<S>, v: Vec<S>) -> Result<Self> {
        if r.len() != v.len() {
            return input("residual and variance vectors differ in length");
        }
        if let Some(i) = v.iter().position(|&x| !(x > S::zero()) || !x.is_finite()) {
            return Err(Error::Invariant(format!("variance {i} is not a positive finite number")));
        }
        Ok(Self { r, v })
    }

    pub fn len(&self) -> usize {
        self.r.len()
    }

    pub fn is_empty(&self) -> bool {
        self.r.is_empty()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MoveCounts {
    pub proposed: [u64; 3],
    pub accepted: [u64; 3],
}

impl MoveCounts {
    fn slot(kind: MoveKind) -> usize {
        match kind {
            MoveKind::Grow => 0,
            MoveKind::Prune => 1,
            MoveKind::Change => 2,
        }
    }
}

/// Sampler-side state of one ensemble: the binned training design and the
/// leaf each observation currently occupies in every tree.
#[derive(Debug, Clone)]
pub struct BackfitSampler {
    design: BinnedDesign,
    members: Vec<Membership>,
    pub counts: MoveCounts,
}

impl BackfitSampler {
    pub fn new<S: Scalar>(ensemble: &Ensemble<S>, design: BinnedDesign) -> Result<Self> {
        if design.n_cols() != ensemble.grid().n_predictors() {
            return input("design width does not match the ensemble's cutpoint grid");
        }
        let members = ensemble.trees.iter().map(|t| Membership::compute(t, &design)).collect();
        Ok(Self { design, members, counts: MoveCounts::default() })
    }

    pub fn design(&self) -> &BinnedDesign {
        &self.design
    }

    pub fn n_obs(&self) -> usize {
        self.design.n_rows()
    }

    /// In-sample fit of the ensemble (sum over trees).
    pub fn fitted<S: Scalar>(&self, ensemble: &Ensemble<S>, exposure: Option<&[S]>) -> Vec<S> {
        let mut fit = vec![S::zero(); self.n_obs()];
        for (tree, m) in ensemble.trees.iter().zip(&self.members) {
            for (i, &leaf) in m.leaf_of.iter().enumerate() {
                let t = exposure.map_or(S::zero(), |e| e[i]);
                fit[i] += tree.payload(leaf as usize).expect("leaf").value_unchecked(t);
            }
        }
        fit
    }

    /// One backfitting pass over every tree.
    ///
    /// `wr.r` must hold the residual of the full model (target minus every
    /// fitted component, this ensemble included). On return it holds the
    /// residual against the updated ensemble, so several ensembles can be
    /// swept in turn against one residual vector.
    pub fn backfit_sweep<S: Scalar, R: Rng + ?Sized>(
        &mut self,
        ensemble: &mut Ensemble<S>,
        wr: &mut WeightedResiduals<S>,
        exposure: Option<&[S]>,
        cfg: &TreePriorConfig,
        rng: &mut R,
    ) -> Result<()> {
        let n = self.n_obs();
        if wr.len() != n {
            return input(format!("{} residuals for a design of {n} rows", wr.len()));
        }
        match (ensemble.leaf_prior, exposure) {
            (LeafPrior::Constant { scale }, None) => {
                let model = ConstantLeaves { scale };
                self.sweep_with(&model, ensemble, wr, None, cfg, rng);
            }
            (LeafPrior::Line { intercept_scale, slope_scale }, Some(e)) => {
                if e.len() != n {
                    return input("one exposure per observation required");
                }
                let model = LineLeaves { scale_intercept: intercept_scale, scale_slope: slope_scale };
                self.sweep_with(&model, ensemble, wr, Some(e), cfg, rng);
            }
            (LeafPrior::Constant { .. }, Some(_)) => return input("exposure given to a constant-leaf ensemble"),
            (LeafPrior::Line { .. }, None) => return input("line-leaf ensemble needs exposures"),
        }
        Ok(())
    }

    fn sweep_with<S: Scalar, L: LeafModel<S>, R: Rng + ?Sized>(
        &mut self,
        model: &L,
        ensemble: &mut Ensemble<S>,
        wr: &mut WeightedResiduals<S>,
        exposure: Option<&[S]>,
        cfg: &TreePriorConfig,
        rng: &mut R,
    ) {
        let grid = ensemble.grid_arc();
        let mut stats: Vec<L::Stats> = Vec::new();
        let mut new_stats: Vec<L::Stats> = Vec::new();
        let zero = S::zero();

        for h in 0..ensemble.trees.len() {
            let tree = &ensemble.trees[h];
            let member = &self.members[h];

            // add this tree's fit back and collect its leaf statistics
            stats.clear();
            stats.resize(tree.capacity(), L::Stats::default());
            for (i, &leaf) in member.leaf_of.iter().enumerate() {
                let t = exposure.map_or(zero, |e| e[i]);
                let leaf = leaf as usize;
                wr.r[i] += tree.payload(leaf).expect("leaf").value_unchecked(t);
                model.push(&mut stats[leaf], wr.r[i], wr.v[i], t);
            }

            let outcome = propose_move(tree, cfg, &grid, &self.design, member, rng);
            if let MoveOutcome::Proposed(p) = outcome {
                self.counts.proposed[MoveCounts::slot(p.kind)] += 1;
                new_stats.clear();
                new_stats.resize(p.tree.capacity(), L::Stats::default());
                for (i, &leaf) in p.membership.leaf_of.iter().enumerate() {
                    let t = exposure.map_or(zero, |e| e[i]);
                    model.push(&mut new_stats[leaf as usize], wr.r[i], wr.v[i], t);
                }
                let lik_old: f64 = tree.leaf_ids().map(|l| model.log_marginal(&stats[l]).as_f64()).sum();
                let lik_new: f64 = p.tree.leaf_ids().map(|l| model.log_marginal(&new_stats[l]).as_f64()).sum();
                let log_alpha = lik_new - lik_old + p.log_prior_ratio + p.log_transition_ratio;
                let u: f64 = rng.random::<f64>();
                if log_alpha >= 0.0 || u.ln() < log_alpha {
                    self.counts.accepted[MoveCounts::slot(p.kind)] += 1;
                    ensemble.trees[h] = p.tree;
                    self.members[h] = p.membership;
                    std::mem::swap(&mut stats, &mut new_stats);
                }
            } else if let MoveOutcome::Rejected(kind) = outcome {
                self.counts.proposed[MoveCounts::slot(kind)] += 1;
            }

            let tree = &mut ensemble.trees[h];
            let leaves: Vec<usize> = tree.leaf_ids().collect();
            for leaf in leaves {
                debug_assert!(L::n(&stats[leaf]) > 0, "empty leaf reached the leaf update");
                let payload = model.draw(&stats[leaf], rng);
                tree.set_payload(leaf, payload);
            }
            for (i, &leaf) in self.members[h].leaf_of.iter().enumerate() {
                let t = exposure.map_or(zero, |e| e[i]);
                wr.r[i] -= tree.payload(leaf as usize).expect("leaf").value_unchecked(t);
            }
        }
    }
}
