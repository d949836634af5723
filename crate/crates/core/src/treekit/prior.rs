use serde::{Deserialize, Serialize};

use super::cutpoints::CutpointGrid;
use super::tree::{RegressionTree, ROOT};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Relative frequencies of the three structural moves.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MoveProbs {
    pub grow: f64,
    pub prune: f64,
    pub change: f64,
}

impl Default for MoveProbs {
    fn default() -> Self {
        Self { grow: 0.4, prune: 0.4, change: 0.2 }
    }
}

/// A node at depth `d` splits with probability `base * (1 + d)^(-power)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TreePriorConfig {
    pub base: f64,
    pub power: f64,
    #[serde(default)]
    pub move_probs: MoveProbs,
}

impl Default for TreePriorConfig {
    fn default() -> Self {
        Self { base: 0.95, power: 2.0, move_probs: MoveProbs::default() }
    }
}

impl TreePriorConfig {
    pub fn validate(&self) -> Result<()> {
        let m = self.move_probs;
        if !(self.base > 0.0 && self.base < 1.0) {
            return Err(Error::Config(format!("tree prior base must lie in (0,1), got {}", self.base)));
        }
        if !(self.power >= 0.0) {
            return Err(Error::Config(format!("tree prior power must be >= 0, got {}", self.power)));
        }
        if [m.grow, m.prune, m.change].iter().any(|p| !(*p >= 0.0)) || ((m.grow + m.prune + m.change) - 1.0).abs() > 1e-9 {
            return Err(Error::Config("move probabilities must be nonnegative and sum to 1".into()));
        }
        Ok(())
    }

    #[inline]
    pub fn split_prob(&self, depth: usize) -> f64 {
        self.base * (1.0 + depth as f64).powf(-self.power)
    }
}

/// Per-node view of which cutpoints remain valid given the ancestors' rules.
///
/// For predictor `j` a node may use cut indices in `[lo, hi)`; a left child
/// of a split at cut `c` inherits `[lo, c)`, the right child `[c + 1, hi)`.
#[derive(Debug, Clone)]
pub struct TreeLayout {
    ranges: Vec<Vec<(u32, u32)>>,
}

impl TreeLayout {
    pub fn new<S: Scalar>(tree: &RegressionTree<S>, sizes: &[usize]) -> Self {
        let mut ranges: Vec<Vec<(u32, u32)>> = vec![Vec::new(); tree.capacity()];
        ranges[ROOT] = sizes.iter().map(|&s| (0, s as u32)).collect();
        for id in tree.preorder() {
            if let (Some(rule), Some((l, r))) = (tree.rule(id), tree.children(id)) {
                let here = ranges[id].clone();
                let mut left = here.clone();
                let mut right = here;
                let c = rule.cut_index as u32;
                if let Some(rg) = left.get_mut(rule.predictor) {
                    rg.1 = c.min(rg.1).max(rg.0);
                }
                if let Some(rg) = right.get_mut(rule.predictor) {
                    rg.0 = (c + 1).max(rg.0).min(rg.1);
                }
                ranges[l] = left;
                ranges[r] = right;
            }
        }
        Self { ranges }
    }

    pub fn range(&self, node: usize, predictor: usize) -> (usize, usize) {
        let (lo, hi) = self.ranges[node][predictor];
        (lo as usize, hi as usize)
    }

    pub fn n_cuts(&self, node: usize, predictor: usize) -> usize {
        let (lo, hi) = self.ranges[node][predictor];
        (hi - lo) as usize
    }

    /// Predictors with at least one valid cut at `node`.
    pub fn available_predictors(&self, node: usize) -> impl Iterator<Item = usize> + '_ {
        self.ranges[node].iter().enumerate().filter(|(_, (lo, hi))| hi > lo).map(|(j, _)| j)
    }

    pub fn n_available(&self, node: usize) -> usize {
        self.available_predictors(node).count()
    }

    pub fn rule_is_valid(&self, node: usize, predictor: usize, cut_index: usize) -> bool {
        match self.ranges[node].get(predictor) {
            Some(&(lo, hi)) => (lo as usize) <= cut_index && cut_index < hi as usize,
            None => false,
        }
    }
}

/// `true` when every split rule lies inside its node's valid cut range.
pub fn tree_is_valid<S: Scalar>(tree: &RegressionTree<S>, layout: &TreeLayout) -> bool {
    tree.internal_ids().all(|id| {
        let rule = tree.rule(id).expect("internal");
        layout.rule_is_valid(id, rule.predictor, rule.cut_index)
    })
}

/// Log prior probability of the tree structure.
///
/// Each internal node contributes its split probability, a uniform choice
/// over predictors with valid cuts, and a uniform choice over that
/// predictor's valid cuts. Each leaf contributes the probability of not
/// splitting, which is 1 when no valid cut remains.
pub fn log_tree_structure_prior<S: Scalar>(
    tree: &RegressionTree<S>,
    cfg: &TreePriorConfig,
    grid: &CutpointGrid<S>,
) -> f64 {
    let layout = TreeLayout::new(tree, &grid.sizes());
    log_prior_with_layout(tree, cfg, &layout)
}

pub fn log_prior_with_layout<S: Scalar>(tree: &RegressionTree<S>, cfg: &TreePriorConfig, layout: &TreeLayout) -> f64 {
    let mut lp = 0.0;
    for id in tree.preorder() {
        let n_avail = layout.n_available(id);
        let ps = cfg.split_prob(tree.depth(id));
        match tree.rule(id) {
            Some(rule) => {
                let n_cuts = layout.n_cuts(id, rule.predictor);
                if n_avail == 0 || n_cuts == 0 || !layout.rule_is_valid(id, rule.predictor, rule.cut_index) {
                    return f64::NEG_INFINITY;
                }
                lp += ps.ln() - (n_avail as f64).ln() - (n_cuts as f64).ln();
            }
            None => {
                if n_avail > 0 {
                    lp += (1.0 - ps).ln();
                }
            }
        }
    }
    lp
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::treekit::tree::SplitRule;

    fn grid(n: usize) -> CutpointGrid<f64> {
        CutpointGrid::new(vec![(0..n).map(|i| i as f64).collect()]).unwrap()
    }

    #[test]
    fn root_only_prior_is_log_of_no_split() {
        let t = RegressionTree::constant(0.0);
        let lp = log_tree_structure_prior(&t, &TreePriorConfig::default(), &grid(10));
        assert!((lp - 0.05f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn depth_one_prior_closed_form() {
        let g = grid(10);
        let mut t = RegressionTree::constant(0.0);
        t.grow(ROOT, SplitRule { predictor: 0, cut_index: 5, threshold: 5.0 });
        let lp = log_tree_structure_prior(&t, &TreePriorConfig::default(), &g);
        let expect = 0.95f64.ln() + 1.0f64.ln() + (0.1f64).ln() + 2.0 * (1.0 - 0.95 * 0.25f64).ln();
        assert!((lp - expect).abs() < 1e-14);
    }

    #[test]
    fn split_at_edge_leaves_an_unsplittable_child() {
        let g = grid(10);
        let mut t = RegressionTree::constant(0.0);
        t.grow(ROOT, SplitRule { predictor: 0, cut_index: 0, threshold: 0.0 });
        let lp = log_tree_structure_prior(&t, &TreePriorConfig::default(), &g);
        // left child has no valid cut and contributes log 1
        let expect = 0.95f64.ln() + 0.1f64.ln() + (1.0 - 0.95 * 0.25f64).ln();
        assert!((lp - expect).abs() < 1e-14);
    }

    #[test]
    fn vanishing_base_kills_any_split() {
        let cfg = TreePriorConfig { base: 1e-300, ..Default::default() };
        let mut t = RegressionTree::constant(0.0);
        t.grow(ROOT, SplitRule { predictor: 0, cut_index: 5, threshold: 5.0 });
        assert!(log_tree_structure_prior(&t, &cfg, &grid(10)) < -600.0);
        let zero = TreePriorConfig { base: 0.0, ..Default::default() };
        assert_eq!(log_tree_structure_prior(&t, &zero, &grid(10)), f64::NEG_INFINITY);
    }

    #[test]
    fn invalid_rule_has_zero_prior() {
        let g = grid(4);
        let mut t = RegressionTree::constant(0.0);
        let (l, _) = t.grow(ROOT, SplitRule { predictor: 0, cut_index: 1, threshold: 1.0 });
        t.grow(l, SplitRule { predictor: 0, cut_index: 2, threshold: 2.0 });
        let layout = TreeLayout::new(&t, &g.sizes());
        assert!(!tree_is_valid(&t, &layout));
        assert_eq!(log_tree_structure_prior(&t, &TreePriorConfig::default(), &g), f64::NEG_INFINITY);
    }

    #[test]
    fn config_validation() {
        assert!(TreePriorConfig::default().validate().is_ok());
        assert!(TreePriorConfig { base: 1.0, ..Default::default() }.validate().is_err());
        assert!(TreePriorConfig { power: -1.0, ..Default::default() }.validate().is_err());
        let bad = MoveProbs { grow: 0.5, prune: 0.5, change: 0.5 };
        assert!(TreePriorConfig { move_probs: bad, ..Default::default() }.validate().is_err());
    }
}
