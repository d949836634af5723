use serde::{Deserialize, Serialize};

use crate::error::{input, Result};
use crate::scalar::Scalar;

/// Default number of equidistant cutpoints for a continuous predictor.
pub const DEFAULT_CUTS: usize = 100;

/// Candidate split values per predictor.
///
/// Continuous predictors get `n_cuts` equidistant interior points over their
/// observed range. Columns whose values all lie in {0, 1, 2} (genotype counts,
/// dummies) get the half-integer cuts between their observed levels. A
/// constant column has no cuts and can never be split on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CutpointGrid<S> {
    cuts: Vec<Vec<S>>,
}

impl<S: Scalar> CutpointGrid<S> {
    pub fn new(cuts: Vec<Vec<S>>) -> Result<Self> {
        for (j, c) in cuts.iter().enumerate() {
            if c.windows(2).any(|w| !(w[0] < w[1])) {
                return input(format!("cutpoints for predictor {j} are not strictly increasing"));
            }
            if c.iter().any(|v| !v.is_finite()) {
                return input(format!("cutpoints for predictor {j} contain non-finite values"));
            }
        }
        Ok(Self { cuts })
    }

    pub fn from_columns(columns: &[Vec<S>], n_cuts: usize) -> Result<Self> {
        let mut cuts = Vec::with_capacity(columns.len());
        for (j, col) in columns.iter().enumerate() {
            if col.iter().any(|v| !v.is_finite()) {
                return input(format!("predictor {j} contains non-finite values"));
            }
            cuts.push(column_cuts(col, n_cuts));
        }
        Ok(Self { cuts })
    }

    pub fn n_predictors(&self) -> usize {
        self.cuts.len()
    }

    pub fn cuts(&self, predictor: usize) -> &[S] {
        &self.cuts[predictor]
    }

    pub fn n_cuts(&self, predictor: usize) -> usize {
        self.cuts[predictor].len()
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.cuts.iter().map(Vec::len).collect()
    }

    /// Number of cutpoints `<= value`. A value goes left of cut `c` exactly
    /// when its bin is `<= c`.
    #[inline]
    pub fn bin(&self, predictor: usize, value: S) -> usize {
        self.cuts[predictor].partition_point(|&c| c <= value)
    }
}

fn column_cuts<S: Scalar>(col: &[S], n_cuts: usize) -> Vec<S> {
    let Some(&first) = col.first() else {
        return Vec::new();
    };
    let (lo, hi) = col
        .iter()
        .fold((first, first), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if !(lo < hi) {
        return Vec::new();
    }
    let two = S::lit(2.0);
    let is_level = |v: S| v == S::zero() || v == S::one() || v == two;
    if col.iter().all(|&v| is_level(v)) {
        let half = S::lit(0.5);
        return [half, S::lit(1.5)]
            .into_iter()
            .filter(|&c| c > lo && c < hi)
            .collect();
    }
    let span = hi - lo;
    let denom = S::from_usize(n_cuts + 1).expect("cut count");
    let mut out: Vec<S> = (1..=n_cuts)
        .map(|k| lo + span * S::from_usize(k).expect("cut index") / denom)
        .collect();
    out.dedup();
    out
}

/// Row-major matrix of bin indices, the form the samplers traverse trees on.
#[derive(Debug, Clone)]
pub struct BinnedDesign {
    n_rows: usize,
    n_cols: usize,
    bins: Vec<u16>,
}

impl BinnedDesign {
    pub fn new<S: Scalar>(columns: &[Vec<S>], grid: &CutpointGrid<S>) -> Result<Self> {
        if columns.len() != grid.n_predictors() {
            return input(format!(
                "design has {} columns but grid has {} predictors",
                columns.len(),
                grid.n_predictors()
            ));
        }
        let n_rows = columns.first().map_or(0, Vec::len);
        if columns.iter().any(|c| c.len() != n_rows) {
            return input("design columns have unequal lengths");
        }
        if grid.sizes().iter().any(|&s| s >= u16::MAX as usize) {
            return input("cutpoint grid too large for binned design");
        }
        let n_cols = columns.len();
        let mut bins = vec![0u16; n_rows * n_cols];
        for (j, col) in columns.iter().enumerate() {
            for (i, &v) in col.iter().enumerate() {
                bins[i * n_cols + j] = grid.bin(j, v) as u16;
            }
        }
        Ok(Self { n_rows, n_cols, bins })
    }

    /// A design with `n_rows` rows and no predictors.
    pub fn empty(n_rows: usize) -> Self {
        Self { n_rows, n_cols: 0, bins: Vec::new() }
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[u16] {
        &self.bins[i * self.n_cols..(i + 1) * self.n_cols]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn continuous_grid_is_equidistant_interior() {
        let col = vec![0.0, 10.0, 3.0];
        let g = CutpointGrid::from_columns(&[col], 4).unwrap();
        assert_eq!(g.cuts(0), &[2.0, 4.0, 6.0, 8.0]);
    }

    #[test]
    fn genotype_and_dummy_columns_get_half_integer_cuts() {
        let snp = vec![0.0, 1.0, 2.0, 1.0];
        let dummy = vec![0.0, 1.0, 1.0, 0.0];
        let het = vec![1.0, 2.0, 2.0, 1.0];
        let constant = vec![1.0; 4];
        let g = CutpointGrid::from_columns(&[snp, dummy, het, constant], 100).unwrap();
        assert_eq!(g.cuts(0), &[0.5, 1.5]);
        assert_eq!(g.cuts(1), &[0.5]);
        assert_eq!(g.cuts(2), &[1.5]);
        assert!(g.cuts(3).is_empty());
    }

    #[test]
    fn bin_matches_strict_less_than_rule() {
        let g = CutpointGrid::new(vec![vec![1.0, 2.0, 3.0]]).unwrap();
        for &(v, b) in &[(0.5, 0), (1.0, 1), (1.5, 1), (2.0, 2), (3.0, 3), (9.0, 3)] {
            assert_eq!(g.bin(0, v), b, "value {v}");
            for c in 0..3 {
                assert_eq!(v < g.cuts(0)[c], g.bin(0, v) <= c);
            }
        }
    }

    #[test]
    fn rejects_unsorted_cuts() {
        assert!(CutpointGrid::new(vec![vec![1.0, 1.0]]).is_err());
        assert!(CutpointGrid::new(vec![vec![2.0, 1.0]]).is_err());
    }
}
