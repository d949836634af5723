//! Two-stage least squares and the first-stage partial F statistic.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{input, Error, Result};

const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TSLSFit {
    pub beta_hat: f64,
    pub intercept: f64,
    pub coef_x: Vec<f64>,
    pub se_beta: f64,
    pub first_stage: FirstStageF,
}

/// Partial F for the instruments; `perfect_fit` marks the `+∞` sentinel
/// returned when the first stage leaves no residual.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FirstStageF {
    #[serde(with = "infinite_as_null")]
    pub value: f64,
    pub perfect_fit: bool,
}

mod infinite_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

struct Ols {
    coef: DVector<f64>,
    rss: f64,
    xtx_inv: DMatrix<f64>,
}

fn design(n: usize, blocks: &[(&str, &[Vec<f64>])]) -> Result<(DMatrix<f64>, Vec<String>)> {
    let mut names = vec!["intercept".to_string()];
    let mut cols: Vec<&[f64]> = Vec::new();
    for (prefix, block) in blocks {
        for (j, c) in block.iter().enumerate() {
            if c.len() != n {
                return input(format!("column {prefix}{} has {} rows, expected {n}", j + 1, c.len()));
            }
            names.push(if *prefix == "t" { "t".to_string() } else { format!("{prefix}{}", j + 1) });
            cols.push(c.as_slice());
        }
    }
    let mut m = DMatrix::from_element(n, names.len(), 1.0);
    for (j, c) in cols.iter().enumerate() {
        m.set_column(j + 1, &DVector::from_column_slice(c));
    }
    Ok((m, names))
}

/// Columns that are (numerically) linear combinations of the ones before
/// them, found by modified Gram-Schmidt.
fn collinear_columns(m: &DMatrix<f64>, names: &[String]) -> Vec<String> {
    let mut basis: Vec<DVector<f64>> = Vec::new();
    let mut bad = Vec::new();
    for j in 0..m.ncols() {
        let original = m.column(j).into_owned();
        let scale = original.norm();
        let mut v = original;
        for q in &basis {
            let proj = q.dot(&v);
            v -= q * proj;
        }
        let rem = v.norm();
        if scale == 0.0 || rem <= RANK_TOL * scale {
            bad.push(names[j].clone());
        } else {
            basis.push(v / rem);
        }
    }
    bad
}

fn ols(m: &DMatrix<f64>, names: &[String], target: &[f64]) -> Result<Ols> {
    let (n, p) = m.shape();
    if n <= p {
        return input(format!("{n} rows cannot identify {p} coefficients"));
    }
    let bad = collinear_columns(m, names);
    if !bad.is_empty() {
        return Err(Error::RankDeficient(bad));
    }
    let qr = m.clone().qr();
    let r = qr.r();
    let qty = qr.q().transpose() * DVector::from_column_slice(target);
    let coef = r.solve_upper_triangular(&qty).ok_or_else(|| Error::RankDeficient(names.to_vec()))?;
    let resid = DVector::from_column_slice(target) - m * &coef;
    let r_inv = r
        .solve_upper_triangular(&DMatrix::identity(p, p))
        .ok_or_else(|| Error::RankDeficient(names.to_vec()))?;
    let xtx_inv = &r_inv * r_inv.transpose();
    Ok(Ols { coef, rss: resid.norm_squared(), xtx_inv })
}

/// Residual variance `RSS / (n - p)` of the OLS fit of `target` on an
/// intercept and `columns`.
pub fn ols_residual_variance(target: &[f64], columns: &[Vec<f64>]) -> Result<f64> {
    let (m, names) = design(target.len(), &[("c", columns)])?;
    let fit = ols(&m, &names, target)?;
    Ok(fit.rss / (target.len() - m.ncols()) as f64)
}

fn check_lengths(n: usize, t: &[f64]) -> Result<()> {
    if t.len() != n {
        return input(format!("exposure has {} rows, outcome has {n}", t.len()));
    }
    if n == 0 {
        return input("empty data");
    }
    Ok(())
}

/// Partial F statistic of the instruments in the regression of `t` on
/// `[1, Z, X]` against `[1, X]`. `z` and `x` are given column by column.
pub fn first_stage_f(t: &[f64], z: &[Vec<f64>], x: &[Vec<f64>]) -> Result<FirstStageF> {
    let n = t.len();
    check_lengths(n, t)?;
    if z.is_empty() {
        return input("at least one instrument required");
    }
    let (full, full_names) = design(n, &[("z", z), ("x", x)])?;
    let (restricted, restricted_names) = design(n, &[("x", x)])?;
    let f = ols(&full, &full_names, t)?;
    let r = ols(&restricted, &restricted_names, t)?;
    let q = z.len() as f64;
    let df = (n - full.ncols()) as f64;
    if f.rss <= f64::EPSILON * r.rss.max(f64::MIN_POSITIVE) {
        return Ok(FirstStageF { value: f64::INFINITY, perfect_fit: true });
    }
    let value = ((r.rss - f.rss) / q) / (f.rss / df);
    Ok(FirstStageF { value, perfect_fit: false })
}

/// 2SLS of `y` on `t` instrumented by `z`, with exogenous covariates `x`.
///
/// The standard error uses the residuals `y - [1, t, X] b` evaluated at the
/// observed exposure and the inverse cross-product of the second-stage design.
pub fn fit_2sls(y: &[f64], t: &[f64], z: &[Vec<f64>], x: &[Vec<f64>]) -> Result<TSLSFit> {
    let n = y.len();
    check_lengths(n, t)?;
    if z.is_empty() {
        return input("at least one instrument required");
    }
    let first_stage = first_stage_f(t, z, x)?;
    let (stage1, names1) = design(n, &[("z", z), ("x", x)])?;
    let s1 = ols(&stage1, &names1, t)?;
    let t_hat: Vec<f64> = (&stage1 * &s1.coef).iter().copied().collect();

    let (stage2, names2) = design(n, &[("t", std::slice::from_ref(&t_hat)), ("x", x)])?;
    let s2 = ols(&stage2, &names2, y).map_err(|e| match e {
        Error::RankDeficient(cols) => {
            Error::RankDeficient(cols.into_iter().map(|c| if c == "t" { "t (fitted from instruments)".into() } else { c }).collect())
        }
        other => other,
    })?;

    let (observed, _) = design(n, &[("t", std::slice::from_ref(&t.to_vec())), ("x", x)])?;
    let resid = DVector::from_column_slice(y) - observed * &s2.coef;
    let df = (n - stage2.ncols()) as f64;
    let sigma2 = resid.norm_squared() / df;
    let se_beta = (sigma2 * s2.xtx_inv[(1, 1)]).sqrt();

    Ok(TSLSFit {
        beta_hat: s2.coef[1],
        intercept: s2.coef[0],
        coef_x: s2.coef.iter().skip(2).copied().collect(),
        se_beta,
        first_stage,
    })
}
