//! Posterior summary reports shared by `fit` and `summarize`.

use std::fmt::Write;

use ivbart::ivmodels::{summarize_draws, ChainScalarSummary, PosteriorDraws, ScalarSummary};
use serde::Serialize;

pub const SUMMARY_SCHEMA: &str = "ivbart.summary/1";

#[derive(Debug, Clone, Serialize)]
pub struct SummaryReport {
    pub schema: &'static str,
    pub seed: u64,
    pub config_hash: String,
    pub variant: String,
    pub n_obs: usize,
    pub chains: usize,
    pub draws: usize,
    pub scalars: Vec<ScalarSummary>,
}

pub fn summary_report(draws: &PosteriorDraws, seed: u64, config_hash: &str) -> SummaryReport {
    SummaryReport {
        schema: SUMMARY_SCHEMA,
        seed,
        config_hash: config_hash.to_string(),
        variant: draws.variant.name().to_string(),
        n_obs: draws.n_obs,
        chains: draws.chains,
        draws: draws.draws.len(),
        scalars: summarize_draws(draws),
    }
}

fn row(out: &mut String, label: &str, s: &ChainScalarSummary) {
    let _ = writeln!(
        out,
        "  {label:<8} n={:<6} mean={:<12.6} sd={:<12.6} 2.5%={:<12.6} 50%={:<12.6} 97.5%={:<12.6}",
        s.n, s.mean, s.sd, s.q025, s.median, s.q975
    );
}

pub fn render_text(r: &SummaryReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# {} seed={} config_hash={}", r.schema, r.seed, r.config_hash);
    let _ = writeln!(out, "variant {}  n_obs {}  chains {}  draws {}", r.variant, r.n_obs, r.chains, r.draws);
    for s in &r.scalars {
        let rhat = s.rhat.map_or("n/a".to_string(), |v| format!("{v:.4}"));
        let _ = writeln!(out, "{}  (split R-hat {rhat})", s.name);
        row(&mut out, "pooled", &s.pooled);
        for c in &s.chains {
            row(&mut out, &format!("chain{}", c.chain.unwrap_or(0)), c);
        }
    }
    out
}
