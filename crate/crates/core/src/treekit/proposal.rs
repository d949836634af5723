//! Grow / prune / change Metropolis-Hastings proposals on tree structure.

use rand::Rng;

use super::cutpoints::{BinnedDesign, CutpointGrid};
use super::prior::{log_prior_with_layout, tree_is_valid, TreeLayout, TreePriorConfig};
use super::tree::{RegressionTree, SplitRule};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MoveKind {
    Grow,
    Prune,
    Change,
}

/// Leaf id reached by every observation of a design.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Membership {
    pub leaf_of: Vec<u32>,
}

impl Membership {
    pub fn compute<S: Scalar>(tree: &RegressionTree<S>, design: &BinnedDesign) -> Self {
        let leaf_of = (0..design.n_rows())
            .map(|i| tree.leaf_of_bins(design.row(i)) as u32)
            .collect();
        Self { leaf_of }
    }

    pub fn counts(&self, capacity: usize) -> Vec<usize> {
        let mut c = vec![0; capacity];
        for &l in &self.leaf_of {
            c[l as usize] += 1;
        }
        c
    }
}

#[derive(Debug, Clone)]
pub struct Proposal<S> {
    pub kind: MoveKind,
    /// Grown leaf, pruned node, or node whose rule changed.
    pub node: usize,
    pub tree: RegressionTree<S>,
    pub membership: Membership,
    /// log q(old | new) - log q(new | old).
    pub log_transition_ratio: f64,
    /// log p(new) - log p(old) under the tree-structure prior.
    pub log_prior_ratio: f64,
}

#[derive(Debug, Clone)]
pub enum MoveOutcome<S> {
    Proposed(Proposal<S>),
    /// The drawn move would leave a leaf without observations (or, for a
    /// change, break a descendant's rule); treated as a rejection.
    Rejected(MoveKind),
    /// The tree admits no move at all (root with no valid cutpoint).
    NoMove,
}

#[derive(Debug, Clone, Copy)]
struct MoveWeights {
    grow: f64,
    prune: f64,
    change: f64,
}

impl MoveWeights {
    fn new<S: Scalar>(cfg: &TreePriorConfig, tree: &RegressionTree<S>, layout: &TreeLayout) -> Self {
        let can_grow = tree.leaf_ids().any(|l| layout.n_available(l) > 0);
        let can_prune = tree.nog_ids().next().is_some();
        let can_change = tree.internal_ids().next().is_some();
        let m = cfg.move_probs;
        let g = if can_grow { m.grow } else { 0.0 };
        let p = if can_prune { m.prune } else { 0.0 };
        let c = if can_change { m.change } else { 0.0 };
        let total = g + p + c;
        if total > 0.0 {
            Self { grow: g / total, prune: p / total, change: c / total }
        } else {
            Self { grow: 0.0, prune: 0.0, change: 0.0 }
        }
    }

    fn total(&self) -> f64 {
        self.grow + self.prune + self.change
    }
}

/// Probability the kernel picks each move type at `tree`, after dropping
/// unavailable moves and renormalising.
pub fn move_type_probabilities<S: Scalar>(
    tree: &RegressionTree<S>,
    cfg: &TreePriorConfig,
    grid: &CutpointGrid<S>,
) -> (f64, f64, f64) {
    let layout = TreeLayout::new(tree, &grid.sizes());
    let w = MoveWeights::new(cfg, tree, &layout);
    (w.grow, w.prune, w.change)
}

fn pick<R: Rng + ?Sized, T: Copy>(items: &[T], rng: &mut R) -> T {
    items[rng.random_range(0..items.len())]
}

pub fn propose_move<S: Scalar, R: Rng + ?Sized>(
    tree: &RegressionTree<S>,
    cfg: &TreePriorConfig,
    grid: &CutpointGrid<S>,
    design: &BinnedDesign,
    membership: &Membership,
    rng: &mut R,
) -> MoveOutcome<S> {
    let sizes = grid.sizes();
    let layout = TreeLayout::new(tree, &sizes);
    let weights = MoveWeights::new(cfg, tree, &layout);
    if weights.total() <= 0.0 {
        return MoveOutcome::NoMove;
    }
    let u: f64 = rng.random::<f64>();
    let kind = if u < weights.grow {
        MoveKind::Grow
    } else if u < weights.grow + weights.prune {
        MoveKind::Prune
    } else {
        MoveKind::Change
    };
    match kind {
        MoveKind::Grow => propose_grow(tree, cfg, grid, &layout, weights, design, membership, rng),
        MoveKind::Prune => propose_prune(tree, cfg, &sizes, &layout, weights, membership, rng),
        MoveKind::Change => propose_change(tree, cfg, grid, &layout, weights, design, membership, rng),
    }
}

fn draw_rule<S: Scalar, R: Rng + ?Sized>(
    node: usize,
    layout: &TreeLayout,
    grid: &CutpointGrid<S>,
    rng: &mut R,
) -> (SplitRule<S>, usize, usize) {
    let vars: Vec<usize> = layout.available_predictors(node).collect();
    let j = pick(&vars, rng);
    let (lo, hi) = layout.range(node, j);
    let c = rng.random_range(lo..hi);
    let rule = SplitRule { predictor: j, cut_index: c, threshold: grid.cuts(j)[c] };
    (rule, vars.len(), hi - lo)
}

#[allow(clippy::too_many_arguments)]
fn propose_grow<S: Scalar, R: Rng + ?Sized>(
    tree: &RegressionTree<S>,
    cfg: &TreePriorConfig,
    grid: &CutpointGrid<S>,
    layout: &TreeLayout,
    weights: MoveWeights,
    design: &BinnedDesign,
    membership: &Membership,
    rng: &mut R,
) -> MoveOutcome<S> {
    let growable: Vec<usize> = tree.leaf_ids().filter(|&l| layout.n_available(l) > 0).collect();
    let leaf = pick(&growable, rng);
    let (rule, n_vars, n_cuts) = draw_rule(leaf, layout, grid, rng);

    let mut new_tree = tree.clone();
    let (left, right) = new_tree.grow(leaf, rule);
    let mut leaf_of = membership.leaf_of.clone();
    let (mut n_left, mut n_right) = (0usize, 0usize);
    for (i, slot) in leaf_of.iter_mut().enumerate() {
        if *slot as usize == leaf {
            if (design.row(i)[rule.predictor] as usize) <= rule.cut_index {
                *slot = left as u32;
                n_left += 1;
            } else {
                *slot = right as u32;
                n_right += 1;
            }
        }
    }
    if n_left == 0 || n_right == 0 {
        return MoveOutcome::Rejected(MoveKind::Grow);
    }

    let new_layout = TreeLayout::new(&new_tree, &grid.sizes());
    let new_weights = MoveWeights::new(cfg, &new_tree, &new_layout);
    let n_nog = new_tree.nog_ids().count();
    let forward = weights.grow.ln() - (growable.len() as f64).ln() - (n_vars as f64).ln() - (n_cuts as f64).ln();
    let reverse = new_weights.prune.ln() - (n_nog as f64).ln();
    MoveOutcome::Proposed(Proposal {
        kind: MoveKind::Grow,
        node: leaf,
        log_prior_ratio: log_prior_with_layout(&new_tree, cfg, &new_layout) - log_prior_with_layout(tree, cfg, layout),
        tree: new_tree,
        membership: Membership { leaf_of },
        log_transition_ratio: reverse - forward,
    })
}

fn propose_prune<S: Scalar, R: Rng + ?Sized>(
    tree: &RegressionTree<S>,
    cfg: &TreePriorConfig,
    sizes: &[usize],
    layout: &TreeLayout,
    weights: MoveWeights,
    membership: &Membership,
    rng: &mut R,
) -> MoveOutcome<S> {
    let nog: Vec<usize> = tree.nog_ids().collect();
    let node = pick(&nog, rng);
    let (l, r) = tree.children(node).expect("internal");
    let rule = *tree.rule(node).expect("internal");

    let mut new_tree = tree.clone();
    new_tree.prune(node);
    let leaf_of = membership
        .leaf_of
        .iter()
        .map(|&s| if s as usize == l || s as usize == r { node as u32 } else { s })
        .collect();

    let new_layout = TreeLayout::new(&new_tree, sizes);
    let new_weights = MoveWeights::new(cfg, &new_tree, &new_layout);
    let n_growable = new_tree.leaf_ids().filter(|&x| new_layout.n_available(x) > 0).count();
    let n_vars = layout.n_available(node);
    let n_cuts = layout.n_cuts(node, rule.predictor);
    let forward = weights.prune.ln() - (nog.len() as f64).ln();
    let reverse =
        new_weights.grow.ln() - (n_growable as f64).ln() - (n_vars as f64).ln() - (n_cuts as f64).ln();
    MoveOutcome::Proposed(Proposal {
        kind: MoveKind::Prune,
        node,
        log_prior_ratio: log_prior_with_layout(&new_tree, cfg, &new_layout) - log_prior_with_layout(tree, cfg, layout),
        tree: new_tree,
        membership: Membership { leaf_of },
        log_transition_ratio: reverse - forward,
    })
}

#[allow(clippy::too_many_arguments)]
fn propose_change<S: Scalar, R: Rng + ?Sized>(
    tree: &RegressionTree<S>,
    cfg: &TreePriorConfig,
    grid: &CutpointGrid<S>,
    layout: &TreeLayout,
    weights: MoveWeights,
    design: &BinnedDesign,
    membership: &Membership,
    rng: &mut R,
) -> MoveOutcome<S> {
    let internal: Vec<usize> = tree.internal_ids().collect();
    let node = pick(&internal, rng);
    let (rule, _, _) = draw_rule(node, layout, grid, rng);

    let mut new_tree = tree.clone();
    new_tree.set_rule(node, rule);
    let new_layout = TreeLayout::new(&new_tree, &grid.sizes());
    if !tree_is_valid(&new_tree, &new_layout) {
        return MoveOutcome::Rejected(MoveKind::Change);
    }
    let mask = new_tree.subtree_mask(node);
    let mut leaf_of = membership.leaf_of.clone();
    let mut counts = vec![0usize; new_tree.capacity()];
    for (i, slot) in leaf_of.iter_mut().enumerate() {
        if mask[*slot as usize] {
            let leaf = new_tree.leaf_of_bins_from(node, design.row(i));
            *slot = leaf as u32;
            counts[leaf] += 1;
        }
    }
    if new_tree.leaf_ids().any(|l| mask[l] && counts[l] == 0) {
        return MoveOutcome::Rejected(MoveKind::Change);
    }
    let new_weights = MoveWeights::new(cfg, &new_tree, &new_layout);
    MoveOutcome::Proposed(Proposal {
        kind: MoveKind::Change,
        node,
        log_prior_ratio: log_prior_with_layout(&new_tree, cfg, &new_layout) - log_prior_with_layout(tree, cfg, layout),
        tree: new_tree,
        membership: Membership { leaf_of },
        log_transition_ratio: new_weights.change.ln() - weights.change.ln(),
    })
}
