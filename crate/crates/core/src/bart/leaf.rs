//! Conjugate leaf updates with per-observation noise variances.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;
use crate::treekit::LeafPayload;

const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Inputs of the `k` calibration rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LeafPriorSpec {
    pub k: f64,
    pub data_range: f64,
    pub n_trees: usize,
}

/// `range / (2 k sqrt(H))`: the sum of `H` independent leaf draws then has
/// standard deviation `range / (2k)`, so with `k = 2` the data range spans
/// the central 95% of the prior on the ensemble prediction.
pub fn leaf_prior_scale(spec: &LeafPriorSpec) -> f64 {
    spec.data_range / (2.0 * spec.k * (spec.n_trees as f64).sqrt())
}

/// Sufficient statistics of a constant leaf: weights are `1 / v_i`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ScalarLeafStats<S> {
    pub n: usize,
    pub sum_w: S,
    pub sum_wr: S,
    pub sum_wr2: S,
    pub sum_log_v: S,
}

impl<S: Scalar> ScalarLeafStats<S> {
    #[inline]
    pub fn push(&mut self, r: S, v: S) {
        let w = v.recip();
        self.n += 1;
        self.sum_w += w;
        self.sum_wr += w * r;
        self.sum_wr2 += w * r * r;
        self.sum_log_v += v.ln();
    }

    /// `push` without the terms that depend only on the observation.
    #[inline]
    pub fn push_partial(&mut self, r: S, v: S) {
        let w = v.recip();
        self.n += 1;
        self.sum_w += w;
        self.sum_wr += w * r;
    }

    pub fn from_slices(r: &[S], v: &[S]) -> Self {
        let mut s = Self::default();
        for (&ri, &vi) in r.iter().zip(v) {
            s.push(ri, vi);
        }
        s
    }

    /// Posterior mean and variance of the leaf value under `N(0, scale^2)`.
    pub fn posterior(&self, scale: S) -> (S, S) {
        let precision = (scale * scale).recip() + self.sum_w;
        (self.sum_wr / precision, precision.recip())
    }

    /// `log ∫ ∏ N(r_i; mu, v_i) N(mu; 0, scale^2) dmu`.
    pub fn log_marginal(&self, scale: S) -> S {
        let half = S::lit(0.5);
        let s2 = scale * scale;
        let precision = s2.recip() + self.sum_w;
        -half * S::from_usize(self.n).expect("count") * S::lit(LN_2PI) - half * self.sum_log_v - half * self.sum_wr2
            - half * s2.ln()
            - half * precision.ln()
            + half * self.sum_wr * self.sum_wr / precision
    }

    /// `log_marginal` up to terms that are identical for every partition of
    /// the same observations.
    pub fn log_marginal_partial(&self, scale: S) -> S {
        let half = S::lit(0.5);
        let s2 = scale * scale;
        let precision = s2.recip() + self.sum_w;
        -half * (s2 * precision).ln() + half * self.sum_wr * self.sum_wr / precision
    }
}

/// Posterior `(mean, variance)` of a constant leaf given the residuals in it.
pub fn leaf_posterior<S: Scalar>(r: &[S], v: &[S], scale: S) -> (S, S) {
    ScalarLeafStats::from_slices(r, v).posterior(scale)
}

pub fn log_marginal_leaf<S: Scalar>(r: &[S], v: &[S], scale: S) -> S {
    ScalarLeafStats::from_slices(r, v).log_marginal(scale)
}

/// Sufficient statistics of a line leaf `a + b t` (weights `1 / v_i`).
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LineLeafStats<S> {
    pub n: usize,
    pub sw: S,
    pub swt: S,
    pub swtt: S,
    pub swr: S,
    pub swtr: S,
    pub swrr: S,
    pub sum_log_v: S,
}

/// Bivariate normal posterior of `(intercept, slope)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinePosterior<S> {
    pub mean: [S; 2],
    pub cov: [[S; 2]; 2],
    pub log_marginal: S,
}

impl<S: Scalar> LineLeafStats<S> {
    #[inline]
    pub fn push(&mut self, t: S, r: S, v: S) {
        let w = v.recip();
        self.n += 1;
        self.sw += w;
        self.swt += w * t;
        self.swtt += w * t * t;
        self.swr += w * r;
        self.swtr += w * t * r;
        self.swrr += w * r * r;
        self.sum_log_v += v.ln();
    }

    /// `push` without the terms that depend only on the observation.
    #[inline]
    pub fn push_partial(&mut self, t: S, r: S, v: S) {
        let w = v.recip();
        self.n += 1;
        self.sw += w;
        self.swt += w * t;
        self.swtt += w * t * t;
        self.swr += w * r;
        self.swtr += w * t * r;
    }

    pub fn posterior(&self, scale_a: S, scale_b: S) -> LinePosterior<S> {
        let half = S::lit(0.5);
        let (va, vb) = (scale_a * scale_a, scale_b * scale_b);
        let p11 = va.recip() + self.sw;
        let p12 = self.swt;
        let p22 = vb.recip() + self.swtt;
        let det = p11 * p22 - p12 * p12;
        let c11 = p22 / det;
        let c12 = -p12 / det;
        let c22 = p11 / det;
        let m1 = c11 * self.swr + c12 * self.swtr;
        let m2 = c12 * self.swr + c22 * self.swtr;
        let quad = self.swr * m1 + self.swtr * m2;
        let log_marginal = -half * S::from_usize(self.n).expect("count") * S::lit(LN_2PI)
            - half * self.sum_log_v
            - half * self.swrr
            - half * (va * vb).ln()
            - half * det.ln()
            + half * quad;
        LinePosterior { mean: [m1, m2], cov: [[c11, c12], [c12, c22]], log_marginal }
    }
}

/// Conjugate update of a line leaf with independent zero-mean priors
/// `N(0, scale_a^2)` on the intercept and `N(0, scale_b^2)` on the slope.
pub fn linear_leaf_posterior<S: Scalar>(t: &[S], r: &[S], v: &[S], scale_a: S, scale_b: S) -> LinePosterior<S> {
    let mut st = LineLeafStats::default();
    for ((&ti, &ri), &vi) in t.iter().zip(r).zip(v) {
        st.push(ti, ri, vi);
    }
    st.posterior(scale_a, scale_b)
}

impl<S: Scalar> LinePosterior<S> {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> [S; 2] {
        let l11 = self.cov[0][0].sqrt();
        let l21 = self.cov[0][1] / l11;
        let l22 = (self.cov[1][1] - l21 * l21).max(S::zero()).sqrt();
        let z1 = S::standard_normal(rng);
        let z2 = S::standard_normal(rng);
        [self.mean[0] + l11 * z1, self.mean[1] + l21 * z1 + l22 * z2]
    }
}

/// Leaf family used inside the backfitting kernel.
pub(crate) trait LeafModel<S: Scalar> {
    type Stats: Copy + Default;
    fn push(&self, st: &mut Self::Stats, r: S, v: S, exposure: S);
    fn n(st: &Self::Stats) -> usize;
    /// Log marginal up to terms shared by every partition of the data.
    fn log_marginal(&self, st: &Self::Stats) -> S;
    fn draw<R: Rng + ?Sized>(&self, st: &Self::Stats, rng: &mut R) -> LeafPayload<S>;
}

pub(crate) struct ConstantLeaves<S> {
    pub scale: S,
}

impl<S: Scalar> LeafModel<S> for ConstantLeaves<S> {
    type Stats = ScalarLeafStats<S>;

    #[inline]
    fn push(&self, st: &mut Self::Stats, r: S, v: S, _exposure: S) {
        st.push_partial(r, v);
    }

    fn n(st: &Self::Stats) -> usize {
        st.n
    }

    fn log_marginal(&self, st: &Self::Stats) -> S {
        st.log_marginal_partial(self.scale)
    }

    fn draw<R: Rng + ?Sized>(&self, st: &Self::Stats, rng: &mut R) -> LeafPayload<S> {
        let (mean, var) = st.posterior(self.scale);
        LeafPayload::Constant(mean + var.sqrt() * S::standard_normal(rng))
    }
}

pub(crate) struct LineLeaves<S> {
    pub scale_intercept: S,
    pub scale_slope: S,
}

impl<S: Scalar> LeafModel<S> for LineLeaves<S> {
    type Stats = LineLeafStats<S>;

    #[inline]
    fn push(&self, st: &mut Self::Stats, r: S, v: S, exposure: S) {
        st.push_partial(exposure, r, v);
    }

    fn n(st: &Self::Stats) -> usize {
        st.n
    }

    fn log_marginal(&self, st: &Self::Stats) -> S {
        st.posterior(self.scale_intercept, self.scale_slope).log_marginal
    }

    fn draw<R: Rng + ?Sized>(&self, st: &Self::Stats, rng: &mut R) -> LeafPayload<S> {
        let [a, b] = st.posterior(self.scale_intercept, self.scale_slope).sample(rng);
        LeafPayload::Line { intercept: a, slope: b }
    }
}
