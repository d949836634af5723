use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{evaluate_replication, generate_dataset, EvalGrid, GenotypeModel, SimScenario, Truth};
use crate::error::{Error, Result};
use crate::ivmodels::{fit, partial_dependence, McmcConfig, ModelSpec, Variant};
use crate::rng::derive_seed;
use crate::tsls::fit_2sls;

pub const RECORDS_FILE: &str = "records.jsonl";
const STUDY_SCHEMA: &str = "ivbart.study/1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    Bayes(Variant),
    Tsls,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Bayes(v) => v.name(),
            Method::Tsls => "2sls",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        if s == "2sls" {
            Ok(Method::Tsls)
        } else {
            Variant::parse(s).map(Method::Bayes)
        }
    }

    fn has_beta(&self) -> bool {
        matches!(self, Method::Tsls | Method::Bayes(Variant::IvBartG))
    }
}

/// A method as written in the study file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct MethodSpec(pub Method);

impl TryFrom<String> for MethodSpec {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        Method::parse(&s).map(MethodSpec)
    }
}

impl From<MethodSpec> for String {
    fn from(m: MethodSpec) -> String {
        m.0.name().to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StudyScenario {
    pub name: String,
    pub truth: Truth,
    pub rho: f64,
    pub c: f64,
    pub n: usize,
    pub n_snps: usize,
    pub n_x: usize,
    pub genotypes: Option<GenotypeModel>,
}

impl Default for StudyScenario {
    fn default() -> Self {
        let s = SimScenario::default();
        Self { name: "scenario".into(), truth: s.truth, rho: s.rho, c: s.c, n: s.n, n_snps: s.n_snps, n_x: s.n_x, genotypes: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StudyMcmc {
    pub burn_in: usize,
    pub draws: usize,
    pub chains: usize,
}

impl Default for StudyMcmc {
    fn default() -> Self {
        Self { burn_in: 500, draws: 500, chains: 1 }
    }
}

/// Scenarios crossed with methods (and, for the Bayesian methods, leaf-prior
/// `k` values), each run for `replications` datasets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StudyConfig {
    pub seed: u64,
    pub replications: usize,
    pub methods: Vec<MethodSpec>,
    /// Each value sets both stages' `k`; empty keeps the model's values.
    pub k_values: Vec<f64>,
    pub mcmc: StudyMcmc,
    pub model: ModelSpec,
    pub grid: EvalGrid,
    #[serde(rename = "scenario")]
    pub scenarios: Vec<StudyScenario>,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            replications: 1,
            methods: vec![MethodSpec(Method::Tsls)],
            k_values: Vec::new(),
            mcmc: StudyMcmc::default(),
            model: ModelSpec::default(),
            grid: EvalGrid::default(),
            scenarios: vec![StudyScenario::default()],
        }
    }
}

const TOP_KEYS: &[&str] = &["seed", "replications", "methods", "k_values", "mcmc", "model", "grid", "scenario"];
const MCMC_KEYS: &[&str] = &["burn_in", "draws", "chains"];
const MODEL_KEYS: &[&str] = &["k_stage1", "k_stage2", "trees_stage1", "trees_stage2", "error_model", "n_cuts", "tree_prior", "iw_dof", "dpm"];
const TREE_PRIOR_KEYS: &[&str] = &["base", "power", "move_probs"];
const MOVE_KEYS: &[&str] = &["grow", "prune", "change"];
const DPM_KEYS: &[&str] = &["alpha_shape", "alpha_rate", "alpha_init", "update_alpha"];
const GRID_KEYS: &[&str] = &["t_points", "x1_points"];
const SCENARIO_KEYS: &[&str] = &["name", "truth", "rho", "c", "n", "n_snps", "n_x", "genotypes"];
const GENOTYPE_KEYS: &[&str] = &["allele_freqs", "latent_corr"];

fn unknown_in(table: &toml::Table, allowed: &[&str], prefix: &str, out: &mut Vec<String>) {
    for key in table.keys() {
        if !allowed.contains(&key.as_str()) {
            out.push(format!("{prefix}{key}"));
        }
    }
}

fn sub_table<'a>(table: &'a toml::Table, key: &str) -> Option<&'a toml::Table> {
    table.get(key).and_then(toml::Value::as_table)
}

/// Keys of a model table that `ModelSpec` does not know, as dotted paths
/// under `prefix`. The variant key is accepted only when `allow_variant`.
pub fn unknown_model_keys(model: &toml::Table, allow_variant: bool, prefix: &str, out: &mut Vec<String>) {
    for key in model.keys() {
        if !(MODEL_KEYS.contains(&key.as_str()) || (allow_variant && key == "variant")) {
            out.push(format!("{prefix}{key}"));
        }
    }
    if let Some(tp) = sub_table(model, "tree_prior") {
        unknown_in(tp, TREE_PRIOR_KEYS, &format!("{prefix}tree_prior."), out);
        if let Some(m) = sub_table(tp, "move_probs") {
            unknown_in(m, MOVE_KEYS, &format!("{prefix}tree_prior.move_probs."), out);
        }
    }
    if let Some(d) = sub_table(model, "dpm") {
        unknown_in(d, DPM_KEYS, &format!("{prefix}dpm."), out);
    }
}

/// Every key of a study file that the schema does not know, as dotted paths.
pub fn unknown_study_keys(table: &toml::Table) -> Vec<String> {
    let mut out = Vec::new();
    unknown_in(table, TOP_KEYS, "", &mut out);
    if let Some(t) = sub_table(table, "mcmc") {
        unknown_in(t, MCMC_KEYS, "mcmc.", &mut out);
    }
    if let Some(t) = sub_table(table, "model") {
        unknown_model_keys(t, false, "model.", &mut out);
    }
    if let Some(t) = sub_table(table, "grid") {
        unknown_in(t, GRID_KEYS, "grid.", &mut out);
    }
    if let Some(list) = table.get("scenario").and_then(toml::Value::as_array) {
        for (i, s) in list.iter().enumerate() {
            if let Some(s) = s.as_table() {
                unknown_in(s, SCENARIO_KEYS, &format!("scenario[{i}]."), &mut out);
                if let Some(g) = sub_table(s, "genotypes") {
                    unknown_in(g, GENOTYPE_KEYS, &format!("scenario[{i}].genotypes."), &mut out);
                }
            }
        }
    }
    out
}

impl StudyConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let table: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        let unknown = unknown_study_keys(&table);
        if !unknown.is_empty() {
            return Err(Error::Config(format!("unknown keys: {}", unknown.join(", "))));
        }
        let cfg: StudyConfig = table.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() {
            return Err(Error::Config("at least one method required".into()));
        }
        if self.scenarios.is_empty() {
            return Err(Error::Config("at least one scenario required".into()));
        }
        if self.k_values.iter().any(|k| !(*k > 0.0)) {
            return Err(Error::Config("k values must be positive".into()));
        }
        if self.mcmc.chains == 0 {
            return Err(Error::Config("mcmc.chains must be at least 1".into()));
        }
        let mut names: Vec<&str> = self.scenarios.iter().map(|s| s.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Config("scenario names must be unique".into()));
        }
        for (i, s) in self.scenarios.iter().enumerate() {
            self.sim_scenario(i, s).validate()?;
        }
        self.model.validate()
    }

    fn sim_scenario(&self, index: usize, s: &StudyScenario) -> SimScenario {
        SimScenario {
            truth: s.truth,
            rho: s.rho,
            c: s.c,
            n: s.n,
            n_snps: s.n_snps,
            n_x: s.n_x,
            replications: self.replications,
            seed: derive_seed(self.seed, &[index as u64]),
            genotypes: s.genotypes.clone(),
        }
    }

    fn k_choices(&self, method: Method) -> Vec<Option<f64>> {
        match method {
            Method::Bayes(_) if !self.k_values.is_empty() => self.k_values.iter().map(|&k| Some(k)).collect(),
            _ => vec![None],
        }
    }
}

/// SHA-256 of the canonical JSON form of the configuration.
pub fn config_hash<T: Serialize>(config: &T) -> String {
    let json = serde_json::to_vec(config).expect("config serializes");
    Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, Copy)]
struct Job {
    scenario: usize,
    rep: usize,
    method: usize,
    k: Option<f64>,
}

/// Result of one (scenario, method, k, replication) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRecord {
    pub scenario: String,
    pub method: String,
    pub k: Option<f64>,
    pub rep: usize,
    pub pd_mean: Vec<f64>,
    pub bias: Vec<f64>,
    pub rmse: Vec<f64>,
    pub beta: Option<f64>,
}

impl ReplicationRecord {
    fn key(&self) -> String {
        record_key(&self.scenario, &self.method, self.k, self.rep)
    }
}

fn record_key(scenario: &str, method: &str, k: Option<f64>, rep: usize) -> String {
    format!("{scenario}|{method}|{}|{rep}", k.map_or("-".to_string(), |k| k.to_string()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StudyOptions {
    pub parallel: usize,
    pub resume: bool,
    /// Run at most this many pending replications, then stop.
    pub stop_after: Option<usize>,
}

impl Default for StudyOptions {
    fn default() -> Self {
        Self { parallel: 1, resume: false, stop_after: None }
    }
}

/// Replication means and sds of one (scenario, method, k) cell.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupSummary {
    pub scenario: String,
    pub method: String,
    pub k: Option<f64>,
    pub reps: usize,
    pub mean_bias: Vec<f64>,
    pub sd_bias: Vec<f64>,
    pub mean_rmse: Vec<f64>,
    pub sd_rmse: Vec<f64>,
    pub mean_beta: Option<f64>,
    pub sd_beta: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct StudyReport {
    pub complete: bool,
    pub jobs_total: usize,
    pub records: Vec<ReplicationRecord>,
    pub groups: Vec<GroupSummary>,
    pub config_hash: String,
    pub out_dir: PathBuf,
}

impl StudyReport {
    pub fn group(&self, scenario: &str, method: &str, k: Option<f64>) -> Option<&GroupSummary> {
        self.groups.iter().find(|g| g.scenario == scenario && g.method == method && g.k == k)
    }
}

fn run_job(cfg: &StudyConfig, job: Job) -> Result<ReplicationRecord> {
    let sc = &cfg.scenarios[job.scenario];
    let sim = cfg.sim_scenario(job.scenario, sc);
    let data = generate_dataset(&sim, job.rep)?;
    let method = cfg.methods[job.method].0;
    let grid_pts = cfg.grid.points();
    let (pd_mean, beta): (Vec<f64>, Option<f64>) = match method {
        Method::Tsls => {
            let f = fit_2sls(&data.y, &data.t, &data.z, &data.x)?;
            let x_means: Vec<f64> = data.x.iter().map(|c| c.iter().sum::<f64>() / c.len() as f64).collect();
            let rest: f64 = f.coef_x.iter().zip(&x_means).skip(1).map(|(b, m)| b * m).sum();
            let pd = grid_pts.iter().map(|&(t, x1)| f.intercept + f.beta_hat * t + f.coef_x[0] * x1 + rest).collect();
            (pd, Some(f.beta_hat))
        }
        Method::Bayes(variant) => {
            let mut spec = cfg.model.clone();
            spec.variant = variant;
            if let Some(k) = job.k {
                spec.k_stage1 = k;
                spec.k_stage2 = k;
            }
            let mcmc = McmcConfig {
                burn_in: cfg.mcmc.burn_in,
                draws: cfg.mcmc.draws,
                chains: cfg.mcmc.chains,
                seed: derive_seed(cfg.seed, &[job.scenario as u64, job.rep as u64, job.method as u64]),
                rho_per_obs: false,
                ..McmcConfig::default()
            };
            let draws = fit(&data, &spec, &mcmc, Some(&cfg.grid.pd_request()))?;
            let pd = partial_dependence(&draws).into_iter().map(|s| s.mean).collect();
            let betas: Vec<f64> = draws.draws.iter().filter_map(|d| d.beta).collect();
            let beta = (!betas.is_empty()).then(|| betas.iter().sum::<f64>() / betas.len() as f64);
            (pd, beta)
        }
    };
    let eval = evaluate_replication(&pd_mean, sc.truth, &cfg.grid)?;
    Ok(ReplicationRecord {
        scenario: sc.name.clone(),
        method: method.name().to_string(),
        k: job.k,
        rep: job.rep,
        pd_mean,
        bias: eval.bias,
        rmse: eval.rmse,
        beta,
    })
}

fn read_records(path: &Path) -> Result<BTreeMap<String, ReplicationRecord>> {
    let mut out = BTreeMap::new();
    if !path.exists() {
        return Ok(out);
    }
    for line in BufReader::new(File::open(path)?).lines() {
        let line = line?;
        // a torn final line from an interrupted write is dropped
        if let Ok(r) = serde_json::from_str::<ReplicationRecord>(&line) {
            out.insert(r.key(), r);
        }
    }
    Ok(out)
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let sd = if v.len() > 1 { (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt() } else { 0.0 };
    (m, sd)
}

fn summarize(records: &[ReplicationRecord], scenario: &str, method: &str, k: Option<f64>) -> GroupSummary {
    let rs: Vec<&ReplicationRecord> = records.iter().filter(|r| r.scenario == scenario && r.method == method && r.k == k).collect();
    let width = |f: fn(&ReplicationRecord) -> &Vec<f64>| rs.first().map_or(0, |r| f(r).len());
    let column_stats = |f: fn(&ReplicationRecord) -> &Vec<f64>| -> (Vec<f64>, Vec<f64>) {
        (0..width(f)).map(|g| mean_sd(&rs.iter().map(|r| f(r)[g]).collect::<Vec<_>>())).unzip()
    };
    let (mean_bias, sd_bias) = column_stats(|r| &r.bias);
    let (mean_rmse, sd_rmse) = column_stats(|r| &r.rmse);
    let betas: Vec<f64> = rs.iter().filter_map(|r| r.beta).collect();
    let (mean_beta, sd_beta) = if betas.is_empty() { (None, None) } else { let (m, s) = mean_sd(&betas); (Some(m), Some(s)) };
    GroupSummary { scenario: scenario.into(), method: method.into(), k, reps: rs.len(), mean_bias, sd_bias, mean_rmse, sd_rmse, mean_beta, sd_beta }
}

fn csv_writer(path: &Path, header_line: &str) -> Result<csv::Writer<BufWriter<File>>> {
    let mut f = BufWriter::new(File::create(path)?);
    writeln!(f, "{header_line}")?;
    Ok(csv::Writer::from_writer(f))
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

fn fmt_k(k: Option<f64>) -> String {
    k.map_or(String::new(), |k| k.to_string())
}

fn write_tables(cfg: &StudyConfig, groups: &[GroupSummary], dir: &Path, hash: &str) -> Result<()> {
    let header = format!("# schema={STUDY_SCHEMA} seed={} config_hash={hash}", cfg.seed);
    let pts = cfg.grid.points();

    let mut w = csv_writer(&dir.join("bias_by_gridpoint.csv"), &header)?;
    w.write_record(["scenario", "method", "k", "t", "x1", "mean_bias", "sd_bias", "reps"]).map_err(csv_err)?;
    for g in groups {
        for (i, &(t, x1)) in pts.iter().enumerate() {
            let row = [g.scenario.clone(), g.method.clone(), fmt_k(g.k), t.to_string(), x1.to_string(), g.mean_bias[i].to_string(), g.sd_bias[i].to_string(), g.reps.to_string()];
            w.write_record(&row).map_err(csv_err)?;
        }
    }
    w.flush()?;

    let mut w = csv_writer(&dir.join("rmse_table.csv"), &header)?;
    w.write_record(["scenario", "method", "k", "x1", "mean_rmse", "sd_rmse", "reps"]).map_err(csv_err)?;
    for g in groups {
        for (i, x1) in cfg.grid.x1_points.iter().enumerate() {
            let row = [g.scenario.clone(), g.method.clone(), fmt_k(g.k), x1.to_string(), g.mean_rmse[i].to_string(), g.sd_rmse[i].to_string(), g.reps.to_string()];
            w.write_record(&row).map_err(csv_err)?;
        }
    }
    w.flush()?;

    let mut w = csv_writer(&dir.join("beta_table.csv"), &header)?;
    w.write_record(["scenario", "method", "k", "c", "n", "mean_beta", "sd_beta", "reps"]).map_err(csv_err)?;
    for g in groups {
        if let (Some(m), Some(s)) = (g.mean_beta, g.sd_beta) {
            let sc = cfg.scenarios.iter().find(|s| s.name == g.scenario).expect("scenario");
            let row = [g.scenario.clone(), g.method.clone(), fmt_k(g.k), sc.c.to_string(), sc.n.to_string(), m.to_string(), s.to_string(), g.reps.to_string()];
            w.write_record(&row).map_err(csv_err)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Run (or continue) a study, appending one record per finished replication
/// to `records.jsonl` in `out_dir`. Tables and the manifest are written once
/// every replication is present.
pub fn run_study(cfg: &StudyConfig, out_dir: &Path, opts: &StudyOptions) -> Result<StudyReport> {
    cfg.validate()?;
    fs::create_dir_all(out_dir)?;
    let hash = config_hash(cfg);
    let records_path = out_dir.join(RECORDS_FILE);
    let manifest_path = out_dir.join("manifest.json");

    let mut done = if opts.resume { read_records(&records_path)? } else { BTreeMap::new() };
    if opts.resume && manifest_path.exists() {
        let m: serde_json::Value = serde_json::from_reader(File::open(&manifest_path)?)?;
        if let Some(h) = m.get("config_hash").and_then(|h| h.as_str()) {
            if h != hash {
                return Err(Error::Config(format!("cannot resume: output directory was written by config {h}")));
            }
        }
    }
    if !opts.resume && records_path.exists() {
        fs::remove_file(&records_path)?;
    }

    let mut jobs = Vec::new();
    for si in 0..cfg.scenarios.len() {
        for rep in 0..cfg.replications {
            for (mi, m) in cfg.methods.iter().enumerate() {
                for k in cfg.k_choices(m.0) {
                    jobs.push(Job { scenario: si, rep, method: mi, k });
                }
            }
        }
    }
    let key_of = |j: &Job| record_key(&cfg.scenarios[j.scenario].name, cfg.methods[j.method].0.name(), j.k, j.rep);
    let mut pending: Vec<Job> = jobs.iter().copied().filter(|j| !done.contains_key(&key_of(j))).collect();
    if let Some(limit) = opts.stop_after {
        pending.truncate(limit);
    }

    let file = OpenOptions::new().create(true).append(true).open(&records_path)?;
    let writer = Mutex::new(BufWriter::new(file));
    let fresh = Mutex::new(Vec::new());
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.parallel.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    pool.install(|| {
        pending.par_iter().try_for_each(|&job| -> Result<()> {
            let rec = run_job(cfg, job)?;
            let line = serde_json::to_string(&rec)?;
            {
                let mut w = writer.lock().expect("writer lock");
                writeln!(w, "{line}")?;
                w.flush()?;
            }
            fresh.lock().expect("records lock").push(rec);
            Ok(())
        })
    })?;
    for r in fresh.into_inner().expect("records lock") {
        done.insert(r.key(), r);
    }

    let records: Vec<ReplicationRecord> = jobs.iter().filter_map(|j| done.get(&key_of(j)).cloned()).collect();
    let complete = records.len() == jobs.len();
    let mut groups = Vec::new();
    for sc in &cfg.scenarios {
        for m in &cfg.methods {
            for k in cfg.k_choices(m.0) {
                groups.push(summarize(&records, &sc.name, m.0.name(), k));
            }
        }
    }
    let groups: Vec<GroupSummary> = groups.into_iter().filter(|g| g.reps > 0).collect();

    let manifest = serde_json::json!({
        "schema": STUDY_SCHEMA,
        "seed": cfg.seed,
        "config_hash": hash,
        "version": env!("CARGO_PKG_VERSION"),
        "jobs_total": jobs.len(),
        "jobs_completed": records.len(),
        "complete": complete,
        "scenarios": cfg.scenarios.iter().enumerate().map(|(i, s)| serde_json::json!({
            "name": s.name,
            "seed": cfg.sim_scenario(i, s).seed,
        })).collect::<Vec<_>>(),
        "beta_methods": cfg.methods.iter().filter(|m| m.0.has_beta()).map(|m| m.0.name()).collect::<Vec<_>>(),
        "config": cfg,
    });
    fs::write(&manifest_path, serde_json::to_string_pretty(&manifest)?)?;
    if complete {
        write_tables(cfg, &groups, out_dir, &hash)?;
    }
    Ok(StudyReport { complete, jobs_total: jobs.len(), records, groups, config_hash: hash, out_dir: out_dir.to_path_buf() })
}
