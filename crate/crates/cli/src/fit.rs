//! The `fit` command: sample a model on CSV data and write its artifacts.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use ivbart::ivmodels::{fit, partial_dependence, rho_diagnostics, write_draws, McmcConfig, PdRequest, PosteriorDraws};

use crate::config::FitConfig;
use crate::data::read_dataset;
use crate::report::summary_report;
use crate::svg::{band_plot, histogram, BandSeries};

pub const FIT_SCHEMA: &str = "ivbart.fit/1";
pub const DRAWS_FILE: &str = "draws.jsonl";
pub const PD_FILE: &str = "pd_summary.csv";
pub const RHO_DRAWS_FILE: &str = "rho_draws.csv";
pub const RHO_OBS_FILE: &str = "rho_obs.csv";
pub const SUMMARY_FILE: &str = "summary.json";

/// Provenance line written at the top of every CSV and SVG artifact.
pub fn provenance(seed: u64, hash: &str) -> String {
    format!("schema={FIT_SCHEMA} seed={seed} config_hash={hash}")
}

fn csv_file(path: &Path, header: &str) -> Result<csv::Writer<BufWriter<File>>> {
    let mut f = BufWriter::new(File::create(path).with_context(|| format!("cannot create {}", path.display()))?);
    writeln!(f, "# {header}")?;
    Ok(csv::Writer::from_writer(f))
}

fn t_grid(cfg: &FitConfig, t: &[f64]) -> Vec<f64> {
    if let Some(p) = &cfg.grid.t_points {
        return p.clone();
    }
    let lo = t.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = t.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let n = cfg.grid.n_t;
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

/// Run a fit and write every artifact into `out_dir`. Returns the paths written.
pub fn cmd_fit(cfg: &FitConfig, config_dir: &Path, out_dir: &Path) -> Result<Vec<PathBuf>> {
    cfg.validate()?;
    let data_path = config_dir.join(&cfg.data);
    let data = read_dataset(&data_path, &cfg.columns)?;
    data.validate(cfg.model.variant.uses_instruments()).context("invalid data")?;

    let request = PdRequest { t_grid: t_grid(cfg, &data.t), fixed_x: cfg.fixed_indices(), x_profiles: cfg.grid.profiles.clone() };
    let mcmc = McmcConfig {
        burn_in: cfg.mcmc.burn_in,
        draws: cfg.mcmc.draws,
        chains: cfg.mcmc.chains,
        thin: cfg.mcmc.thin,
        seed: cfg.seed,
        keep_models: false,
        rho_per_obs: cfg.rho_per_obs,
    };
    let draws = fit(&data, &cfg.model, &mcmc, Some(&request))?;
    write_artifacts(cfg, &draws, out_dir)
}

fn write_artifacts(cfg: &FitConfig, draws: &PosteriorDraws, out_dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out_dir).with_context(|| format!("cannot create {}", out_dir.display()))?;
    let hash = cfg.hash();
    let prov = provenance(cfg.seed, &hash);
    let mut written = Vec::new();

    let path = out_dir.join(DRAWS_FILE);
    let mut w = BufWriter::new(File::create(&path)?);
    write_draws(&mut w, draws, cfg.seed, &hash)?;
    w.flush()?;
    written.push(path);

    let pd = partial_dependence(draws);
    let path = out_dir.join(PD_FILE);
    let mut w = csv_file(&path, &prov)?;
    let mut header = vec!["t".to_string()];
    header.extend(cfg.grid.fixed.iter().cloned());
    header.extend(["mean", "lower", "upper", "extrapolated"].map(String::from));
    w.write_record(&header)?;
    for s in &pd {
        let mut row = vec![s.t.to_string()];
        row.extend(s.x.iter().map(f64::to_string));
        row.extend([s.mean.to_string(), s.lower.to_string(), s.upper.to_string(), s.extrapolated.to_string()]);
        w.write_record(&row)?;
    }
    w.flush()?;
    written.push(path);

    let rho = rho_diagnostics(draws);
    let path = out_dir.join(RHO_DRAWS_FILE);
    let mut w = csv_file(&path, &prov)?;
    w.write_record(["chain", "iteration", "rho"])?;
    for (c, it, r) in &rho.per_draw {
        w.write_record([c.to_string(), it.to_string(), r.to_string()])?;
    }
    w.flush()?;
    written.push(path);

    let path = out_dir.join(RHO_OBS_FILE);
    let mut w = csv_file(&path, &prov)?;
    let mut header = vec!["obs".to_string()];
    header.extend((0..rho.per_obs.len()).map(|c| format!("chain{c}")));
    header.push("pooled".into());
    w.write_record(&header)?;
    let pooled: Vec<f64> = if rho.per_obs.iter().any(Vec::is_empty) {
        Vec::new()
    } else {
        (0..draws.n_obs).map(|i| rho.per_obs.iter().map(|c| c[i]).sum::<f64>() / rho.per_obs.len() as f64).collect()
    };
    for (i, p) in pooled.iter().enumerate() {
        let mut row = vec![i.to_string()];
        row.extend(rho.per_obs.iter().map(|c| c[i].to_string()));
        row.push(p.to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    written.push(path);

    let path = out_dir.join(SUMMARY_FILE);
    let report = summary_report(draws, cfg.seed, &hash);
    fs::write(&path, serde_json::to_string_pretty(&report)? + "\n")?;
    written.push(path);

    let mut series: Vec<BandSeries> = Vec::new();
    for s in &pd {
        let label = if cfg.grid.fixed.is_empty() {
            "f2".to_string()
        } else {
            cfg.grid.fixed.iter().zip(&s.x).map(|(n, v)| format!("{n}={v}")).collect::<Vec<_>>().join(", ")
        };
        if series.last().is_none_or(|l| l.label != label) {
            series.push(BandSeries { label, x: Vec::new(), mean: Vec::new(), lower: Vec::new(), upper: Vec::new() });
        }
        let cur = series.last_mut().expect("series");
        cur.x.push(s.t);
        cur.mean.push(s.mean);
        cur.lower.push(s.lower);
        cur.upper.push(s.upper);
    }
    let figures = [
        ("pd.svg", band_plot(&prov, "Partial dependence with 95% credible band", "t", "f2", &series)),
        ("rho_draws.svg", histogram(&prov, "Posterior draws of rho", "rho", &rho.per_draw.iter().map(|d| d.2).collect::<Vec<_>>(), 30)),
        ("rho_obs.svg", histogram(&prov, "Posterior mean of rho across observations", "rho", &pooled, 30)),
    ];
    for (name, svg) in figures {
        let path = out_dir.join(name);
        fs::write(&path, svg)?;
        written.push(path);
    }
    Ok(written)
}
