#![allow(dead_code)]

use statrs::distribution::{ChiSquared, ContinuousCDF};

/// `log ∫ exp(log_f(x)) dx` over `[lo, hi]` by the trapezoid rule on `n` intervals.
pub fn log_integral(log_f: impl Fn(f64) -> f64, lo: f64, hi: f64, n: usize) -> f64 {
    let h = (hi - lo) / n as f64;
    let vals: Vec<f64> = (0..=n).map(|i| log_f(lo + i as f64 * h)).collect();
    let m = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let s: f64 = vals.iter().enumerate().map(|(i, v)| if i == 0 || i == n { 0.5 } else { 1.0 } * (v - m).exp()).sum();
    m + (s * h).ln()
}

/// Normalised weights and nodes of a log-density on a uniform grid.
pub fn grid_weights(log_f: impl Fn(f64) -> f64, lo: f64, hi: f64, n: usize) -> Vec<(f64, f64)> {
    let h = (hi - lo) / n as f64;
    let pts: Vec<(f64, f64)> = (0..=n).map(|i| lo + i as f64 * h).map(|x| (x, log_f(x))).collect();
    let m = pts.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = pts.iter().enumerate().map(|(i, p)| if i == 0 || i == n { 0.5 } else { 1.0 } * (p.1 - m).exp()).collect();
    let total: f64 = w.iter().sum();
    pts.iter().zip(&w).map(|(p, w)| (p.0, w / total)).collect()
}

pub fn mean_var(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    (m, v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0))
}

/// Two-sample Kolmogorov-Smirnov statistic and asymptotic p-value.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> (f64, f64) {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0usize, 0usize, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    let ne = na * nb / (na + nb);
    let lambda = (ne.sqrt() + 0.12 + 0.11 / ne.sqrt()) * d;
    let mut p = 0.0;
    for k in 1..=200 {
        let term = 2.0 * (-1.0f64).powi(k - 1) * (-2.0 * (k as f64).powi(2) * lambda * lambda).exp();
        p += term;
        if term.abs() < 1e-12 {
            break;
        }
    }
    (d, p.clamp(0.0, 1.0))
}

/// Pearson chi-square goodness-of-fit p-value.
pub fn chi_square_gof(observed: &[u64], probs: &[f64]) -> (f64, f64) {
    let n: u64 = observed.iter().sum();
    let stat: f64 = observed.iter().zip(probs).map(|(&o, &p)| (o as f64 - n as f64 * p).powi(2) / (n as f64 * p)).sum();
    let df = (observed.len() - 1) as f64;
    (stat, 1.0 - ChiSquared::new(df).unwrap().cdf(stat))
}
