use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize, Serializer};

use super::model::F2Snapshot;
use super::spec::Variant;
use crate::covariance::Sym2;
use crate::error::{Error, Result};

/// Tag of the posterior-draw file format.
pub const DRAWS_SCHEMA: &str = "ivbart.draws/1";

/// Error correlation of one draw: one value for a single covariance, or one
/// per observation under the mixture model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RhoDraw {
    Scalar(f64),
    PerObs(Vec<f64>),
}

impl RhoDraw {
    pub fn mean(&self) -> f64 {
        match self {
            RhoDraw::Scalar(r) => *r,
            RhoDraw::PerObs(v) => v.iter().sum::<f64>() / v.len() as f64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Draw {
    pub chain: usize,
    pub iteration: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho: Option<RhoDraw>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<Sym2>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_yy: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_clusters: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    pub log_lik: f64,
    /// Partial dependence at each requested point.
    pub pd: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PdPoint {
    pub t: f64,
    pub x: Vec<f64>,
    /// The exposure value lies outside the training range.
    pub extrapolated: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PosteriorDraws {
    pub variant: Variant,
    pub n_obs: usize,
    pub chains: usize,
    /// Covariate columns held fixed by the partial-dependence points.
    pub fixed_x: Vec<usize>,
    pub points: Vec<PdPoint>,
    pub draws: Vec<Draw>,
    #[serde(skip)]
    pub models: Vec<F2Snapshot>,
}

impl PosteriorDraws {
    pub fn chain_draws(&self, chain: usize) -> impl Iterator<Item = &Draw> + '_ {
        self.draws.iter().filter(move |d| d.chain == chain)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PdSummary {
    pub t: f64,
    pub x: Vec<f64>,
    pub mean: f64,
    pub lower: f64,
    pub upper: f64,
    pub extrapolated: bool,
}

/// Linear-interpolation quantile of sorted data.
pub(crate) fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Posterior mean and central 95% band of the partial dependence at every
/// recorded point.
pub fn partial_dependence(draws: &PosteriorDraws) -> Vec<PdSummary> {
    draws
        .points
        .iter()
        .enumerate()
        .map(|(g, p)| {
            let mut vals: Vec<f64> = draws.draws.iter().map(|d| d.pd[g]).collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            vals.sort_by(f64::total_cmp);
            PdSummary {
                t: p.t,
                x: p.x.clone(),
                mean,
                lower: quantile_sorted(&vals, 0.025),
                upper: quantile_sorted(&vals, 0.975),
                extrapolated: p.extrapolated,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RhoDiagnostics {
    /// `(chain, iteration, mean over observations)` per draw.
    pub per_draw: Vec<(usize, usize, f64)>,
    /// Per chain, each observation's mean over that chain's draws.
    pub per_obs: Vec<Vec<f64>>,
}

/// Both averages of the per-observation correlation matrix `rho[i][d]`,
/// computed within chain.
pub fn rho_diagnostics(draws: &PosteriorDraws) -> RhoDiagnostics {
    let n = draws.n_obs;
    let mut per_draw = Vec::new();
    let mut per_obs = Vec::new();
    for c in 0..draws.chains {
        let mut acc = vec![0.0; n];
        let mut count = 0usize;
        for d in draws.chain_draws(c) {
            let Some(rho) = &d.rho else { continue };
            per_draw.push((d.chain, d.iteration, rho.mean()));
            match rho {
                RhoDraw::Scalar(r) => acc.iter_mut().for_each(|a| *a += r),
                RhoDraw::PerObs(v) => acc.iter_mut().zip(v).for_each(|(a, r)| *a += r),
            }
            count += 1;
        }
        if count > 0 {
            acc.iter_mut().for_each(|a| *a /= count as f64);
            per_obs.push(acc);
        } else {
            per_obs.push(Vec::new());
        }
    }
    RhoDiagnostics { per_draw, per_obs }
}

/// First line of a draw file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrawsHeader {
    pub schema: String,
    pub seed: u64,
    pub config_hash: String,
    pub variant: Variant,
    pub n_obs: usize,
    pub chains: usize,
    pub fixed_x: Vec<usize>,
    pub points: Vec<PdPoint>,
}

/// JSON lines: a header, then one record per retained draw.
pub fn write_draws<W: Write>(mut w: W, draws: &PosteriorDraws, seed: u64, config_hash: &str) -> Result<()> {
    let header = DrawsHeader {
        schema: DRAWS_SCHEMA.to_string(),
        seed,
        config_hash: config_hash.to_string(),
        variant: draws.variant,
        n_obs: draws.n_obs,
        chains: draws.chains,
        fixed_x: draws.fixed_x.clone(),
        points: draws.points.clone(),
    };
    serde_json::to_writer(&mut w, &header)?;
    w.write_all(b"\n")?;
    for d in &draws.draws {
        serde_json::to_writer(&mut w, d)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_draws<R: BufRead>(r: R) -> Result<(DrawsHeader, PosteriorDraws)> {
    let mut lines = r.lines();
    let first = lines.next().ok_or_else(|| Error::Input("draw file is empty".into()))??;
    let raw: serde_json::Value = serde_json::from_str(&first)?;
    let found = raw.get("schema").and_then(|s| s.as_str()).unwrap_or("<missing>").to_string();
    if found != DRAWS_SCHEMA {
        return Err(Error::Schema { expected: DRAWS_SCHEMA.into(), found });
    }
    let header: DrawsHeader = serde_json::from_value(raw)?;
    let mut draws = Vec::new();
    for (k, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let d: Draw = serde_json::from_str(&line).map_err(|e| Error::Input(format!("draw record {}: {e}", k + 1)))?;
        if d.pd.len() != header.points.len() {
            return Err(Error::Input(format!("draw record {} has {} grid values, header lists {}", k + 1, d.pd.len(), header.points.len())));
        }
        draws.push(d);
    }
    let post = PosteriorDraws {
        variant: header.variant,
        n_obs: header.n_obs,
        chains: header.chains,
        fixed_x: header.fixed_x.clone(),
        points: header.points.clone(),
        draws,
        models: Vec::new(),
    };
    Ok((header, post))
}

fn finite_or_string<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_f64(*v)
    } else {
        s.serialize_str(&v.to_string())
    }
}

fn opt_finite_or_string<S: Serializer>(v: &Option<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    match v {
        Some(x) => finite_or_string(x, s),
        None => s.serialize_none(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChainScalarSummary {
    /// `None` for the pooled summary.
    pub chain: Option<usize>,
    pub n: usize,
    #[serde(serialize_with = "finite_or_string")]
    pub mean: f64,
    #[serde(serialize_with = "finite_or_string")]
    pub sd: f64,
    #[serde(serialize_with = "finite_or_string")]
    pub q025: f64,
    #[serde(serialize_with = "finite_or_string")]
    pub median: f64,
    #[serde(serialize_with = "finite_or_string")]
    pub q975: f64,
}

impl ChainScalarSummary {
    pub fn of(chain: Option<usize>, values: &[f64]) -> Self {
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n as f64;
        let sd = if n > 1 { (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt() } else { 0.0 };
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        Self {
            chain,
            n,
            mean,
            sd,
            q025: quantile_sorted(&sorted, 0.025),
            median: quantile_sorted(&sorted, 0.5),
            q975: quantile_sorted(&sorted, 0.975),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScalarSummary {
    pub name: String,
    pub pooled: ChainScalarSummary,
    pub chains: Vec<ChainScalarSummary>,
    /// Split-chain potential scale reduction; `None` when chains are too short.
    #[serde(serialize_with = "opt_finite_or_string")]
    pub rhat: Option<f64>,
}

/// Split-chain potential scale reduction factor. Each chain is cut into two
/// halves (dropping the middle draw of odd-length chains).
pub fn split_rhat(chains: &[Vec<f64>]) -> Option<f64> {
    let mut halves: Vec<&[f64]> = Vec::new();
    let len = chains.iter().map(Vec::len).min()?;
    let half = len / 2;
    if half < 2 {
        return None;
    }
    for c in chains {
        halves.push(&c[..half]);
        halves.push(&c[c.len() - half..]);
    }
    let m = halves.len() as f64;
    let n = half as f64;
    let means: Vec<f64> = halves.iter().map(|h| h.iter().sum::<f64>() / n).collect();
    let grand = means.iter().sum::<f64>() / m;
    let b = n * means.iter().map(|x| (x - grand).powi(2)).sum::<f64>() / (m - 1.0);
    let w = halves
        .iter()
        .zip(&means)
        .map(|(h, mu)| h.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / (n - 1.0))
        .sum::<f64>()
        / m;
    if w == 0.0 {
        return Some(if b == 0.0 { 1.0 } else { f64::INFINITY });
    }
    let var_plus = (n - 1.0) / n * w + b / n;
    Some((var_plus / w).sqrt())
}

/// Per-chain and pooled summaries of every scalar trace present in the draws.
pub fn summarize_draws(draws: &PosteriorDraws) -> Vec<ScalarSummary> {
    type Getter = fn(&Draw) -> Option<f64>;
    let traces: [(&str, Getter); 6] = [
        ("beta", |d| d.beta),
        ("rho", |d| d.rho.as_ref().map(RhoDraw::mean)),
        ("n_clusters", |d| d.n_clusters.map(|k| k as f64)),
        ("alpha", |d| d.alpha),
        ("sigma_yy", |d| d.sigma_yy.or(d.sigma.map(|s| s.yy))),
        ("log_lik", |d| Some(d.log_lik)),
    ];
    let mut out = Vec::new();
    for (name, get) in traces {
        let per_chain: Vec<Vec<f64>> = (0..draws.chains).map(|c| draws.chain_draws(c).filter_map(get).collect()).collect();
        let pooled: Vec<f64> = per_chain.iter().flatten().copied().collect();
        if pooled.is_empty() {
            continue;
        }
        out.push(ScalarSummary {
            name: name.to_string(),
            pooled: ChainScalarSummary::of(None, &pooled),
            chains: per_chain.iter().enumerate().filter(|(_, v)| !v.is_empty()).map(|(c, v)| ChainScalarSummary::of(Some(c), v)).collect(),
            rhat: split_rhat(&per_chain.into_iter().filter(|v| !v.is_empty()).collect::<Vec<_>>()),
        });
    }
    out
}
