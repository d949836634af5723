use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{input, Error, Result};
use crate::scalar::Scalar;
use crate::treekit::{CutpointGrid, LeafPayload, RegressionTree};

/// Prior on leaf payloads: `N(0, scale^2)` for constants, independent
/// zero-mean normals on intercept and slope for lines.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LeafPrior<S> {
    Constant { scale: S },
    Line { intercept_scale: S, slope_scale: S },
}

impl<S: Scalar> LeafPrior<S> {
    pub fn is_line(&self) -> bool {
        matches!(self, Self::Line { .. })
    }

    fn zero_payload(&self) -> LeafPayload<S> {
        match self {
            Self::Constant { .. } => LeafPayload::Constant(S::zero()),
            Self::Line { .. } => LeafPayload::Line { intercept: S::zero(), slope: S::zero() },
        }
    }
}

/// Sum of regression trees sharing one cutpoint grid.
///
/// The grid is not serialized; a deserialized ensemble predicts from the
/// thresholds stored on its rules but cannot be sampled further.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct Ensemble<S> {
    pub leaf_prior: LeafPrior<S>,
    pub trees: Vec<RegressionTree<S>>,
    #[serde(skip, default = "empty_grid")]
    grid: Arc<CutpointGrid<S>>,
}

fn empty_grid<S: Scalar>() -> Arc<CutpointGrid<S>> {
    Arc::new(CutpointGrid::new(Vec::new()).expect("empty grid"))
}

impl<S: Scalar> Ensemble<S> {
    /// `n_trees` root-only trees with zero payloads.
    pub fn new(n_trees: usize, leaf_prior: LeafPrior<S>, grid: Arc<CutpointGrid<S>>) -> Result<Self> {
        if n_trees == 0 {
            return input("an ensemble needs at least one tree");
        }
        let ok = match leaf_prior {
            LeafPrior::Constant { scale } => scale > S::zero(),
            LeafPrior::Line { intercept_scale, slope_scale } => intercept_scale > S::zero() && slope_scale > S::zero(),
        };
        if !ok {
            return Err(Error::Invariant("leaf prior scales must be positive".into()));
        }
        let trees = vec![RegressionTree::leaf(leaf_prior.zero_payload()); n_trees];
        Ok(Self { leaf_prior, trees, grid })
    }

    pub fn from_trees(trees: Vec<RegressionTree<S>>, leaf_prior: LeafPrior<S>, grid: Arc<CutpointGrid<S>>) -> Self {
        Self { leaf_prior, trees, grid }
    }

    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }

    pub fn grid(&self) -> &CutpointGrid<S> {
        &self.grid
    }

    pub fn grid_arc(&self) -> Arc<CutpointGrid<S>> {
        Arc::clone(&self.grid)
    }

    /// Concatenation of two ensembles' trees; predictions add.
    pub fn union(&self, other: &Self) -> Self {
        let mut trees = self.trees.clone();
        trees.extend(other.trees.iter().cloned());
        Self { leaf_prior: self.leaf_prior, trees, grid: Arc::clone(&self.grid) }
    }

    #[inline]
    pub(crate) fn predict_row_fast(&self, row: &[S], exposure: S) -> S {
        let mut acc = S::zero();
        for tree in &self.trees {
            let leaf = tree.leaf_of_row_fast(row);
            acc += tree.payload(leaf).expect("leaf").value_unchecked(exposure);
        }
        acc
    }

    fn check_rows(&self, rows: &[Vec<S>], exposures: Option<&[S]>) -> Result<()> {
        match (self.leaf_prior.is_line(), exposures) {
            (true, None) => return input("line-leaf ensemble needs exposure values"),
            (false, Some(_)) => return input("exposure values given to a constant-leaf ensemble"),
            (true, Some(e)) if e.len() != rows.len() => return input("one exposure per row required"),
            _ => {}
        }
        if let Some(maxp) = self.trees.iter().filter_map(RegressionTree::max_predictor).max() {
            if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() <= maxp) {
                return input(format!("row {i} has {} values; ensemble splits on predictor {maxp}", r.len()));
            }
        }
        Ok(())
    }

    /// Sum over trees of each row's leaf payload.
    pub fn predict(&self, rows: &[Vec<S>], exposures: Option<&[S]>) -> Result<Vec<S>> {
        self.check_rows(rows, exposures)?;
        Ok(rows
            .iter()
            .enumerate()
            .map(|(i, row)| self.predict_row_fast(row, exposures.map_or(S::zero(), |e| e[i])))
            .collect())
    }

    /// Partial dependence at several points that fix the same set of columns.
    ///
    /// For every point, the ensemble is averaged over `background` rows with
    /// the `fixed_cols` overwritten by the point's values (and line leaves
    /// evaluated at the point's exposure). Each tree is handled by counting,
    /// per leaf, the background rows that satisfy the leaf's path conditions
    /// on non-fixed columns; a point then picks up the leaves whose fixed
    /// conditions it satisfies.
    pub fn partial_dependence(
        &self,
        fixed_cols: &[usize],
        points: &[Vec<S>],
        exposures: Option<&[S]>,
        background: &[Vec<S>],
    ) -> Result<Vec<S>> {
        if background.is_empty() {
            return input("partial dependence needs at least one background row");
        }
        if points.iter().any(|p| p.len() != fixed_cols.len()) {
            return input("each point must give one value per fixed column");
        }
        match (self.leaf_prior.is_line(), exposures) {
            (true, None) => return input("line-leaf ensemble needs exposure values"),
            (false, Some(_)) => return input("exposure values given to a constant-leaf ensemble"),
            (true, Some(e)) if e.len() != points.len() => return input("one exposure per point required"),
            _ => {}
        }
        let width = background[0].len().max(fixed_cols.iter().map(|c| c + 1).max().unwrap_or(0));
        let mut fixed_pos = vec![usize::MAX; width];
        for (k, &c) in fixed_cols.iter().enumerate() {
            fixed_pos[c] = k;
        }
        let needed = self
            .trees
            .iter()
            .flat_map(|t| t.internal_ids().map(move |id| t.rule(id).expect("internal").predictor))
            .filter(|&p| fixed_pos.get(p).is_none_or(|&k| k == usize::MAX))
            .max();
        if let Some(m) = needed {
            if background.iter().any(|r| r.len() <= m) {
                return input(format!("background rows too short for predictor {m}"));
            }
        }

        let n_bg = S::from_usize(background.len()).expect("count");
        let mut out = vec![S::zero(); points.len()];
        let mut counts: Vec<S> = Vec::new();
        let mut stack: Vec<usize> = Vec::new();
        for tree in &self.trees {
            counts.clear();
            counts.resize(tree.capacity(), S::zero());
            for row in background {
                stack.push(crate::treekit::ROOT);
                while let Some(id) = stack.pop() {
                    match (tree.rule(id), tree.children(id)) {
                        (Some(rule), Some((l, r))) => {
                            if fixed_pos.get(rule.predictor).is_some_and(|&k| k != usize::MAX) {
                                stack.push(l);
                                stack.push(r);
                            } else if row[rule.predictor] < rule.threshold {
                                stack.push(l);
                            } else {
                                stack.push(r);
                            }
                        }
                        _ => counts[id] += S::one(),
                    }
                }
            }
            for (p, point) in points.iter().enumerate() {
                let exposure = exposures.map_or(S::zero(), |e| e[p]);
                let mut acc = S::zero();
                stack.push(crate::treekit::ROOT);
                while let Some(id) = stack.pop() {
                    match (tree.rule(id), tree.children(id)) {
                        (Some(rule), Some((l, r))) => match fixed_pos.get(rule.predictor) {
                            Some(&k) if k != usize::MAX => {
                                stack.push(if point[k] < rule.threshold { l } else { r });
                            }
                            _ => {
                                stack.push(l);
                                stack.push(r);
                            }
                        },
                        _ => {
                            if counts[id] > S::zero() {
                                acc += counts[id] * tree.payload(id).expect("leaf").value_unchecked(exposure);
                            }
                        }
                    }
                }
                out[p] += acc / n_bg;
            }
        }
        Ok(out)
    }
}
