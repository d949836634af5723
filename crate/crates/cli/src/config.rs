//! Fit configuration files.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use ivbart::ivmodels::ModelSpec;
use ivbart::simlab::unknown_model_keys;
use serde::{Deserialize, Serialize};

use crate::data::ColumnRoles;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitMcmc {
    pub burn_in: usize,
    /// Retained draws per chain.
    pub draws: usize,
    pub chains: usize,
    pub thin: usize,
}

impl Default for FitMcmc {
    fn default() -> Self {
        Self { burn_in: 500, draws: 500, chains: 1, thin: 1 }
    }
}

/// Where partial dependence is evaluated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitGrid {
    /// Exposure values; when absent, `n_t` evenly spaced values over the
    /// observed exposure range.
    pub t_points: Option<Vec<f64>>,
    pub n_t: usize,
    /// Covariates held fixed, by column name.
    pub fixed: Vec<String>,
    /// One value per fixed covariate for each profile.
    pub profiles: Vec<Vec<f64>>,
}

impl Default for FitGrid {
    fn default() -> Self {
        Self { t_points: None, n_t: 25, fixed: Vec::new(), profiles: Vec::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    /// CSV path, relative to the config file.
    pub data: PathBuf,
    pub seed: u64,
    /// Output directory, relative to the working directory.
    pub output: PathBuf,
    pub columns: ColumnRoles,
    pub model: ModelSpec,
    pub mcmc: FitMcmc,
    pub grid: FitGrid,
    /// Record each observation's correlation under the mixture error model.
    pub rho_per_obs: bool,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            data: PathBuf::from("data.csv"),
            seed: 1,
            output: PathBuf::from("ivbart-out"),
            columns: ColumnRoles::default(),
            model: ModelSpec::default(),
            mcmc: FitMcmc::default(),
            grid: FitGrid::default(),
            rho_per_obs: true,
        }
    }
}

const TOP_KEYS: &[&str] = &["data", "seed", "output", "columns", "model", "mcmc", "grid", "rho_per_obs"];
const COLUMN_KEYS: &[&str] = &["outcome", "exposure", "instruments", "covariates"];
const MCMC_KEYS: &[&str] = &["burn_in", "draws", "chains", "thin"];
const GRID_KEYS: &[&str] = &["t_points", "n_t", "fixed", "profiles"];

fn unknown_keys(table: &toml::Table) -> Vec<String> {
    let mut out = Vec::new();
    let check = |t: &toml::Table, allowed: &[&str], prefix: &str, out: &mut Vec<String>| {
        out.extend(t.keys().filter(|k| !allowed.contains(&k.as_str())).map(|k| format!("{prefix}{k}")));
    };
    check(table, TOP_KEYS, "", &mut out);
    let sub = |k: &str| table.get(k).and_then(toml::Value::as_table);
    if let Some(t) = sub("columns") {
        check(t, COLUMN_KEYS, "columns.", &mut out);
    }
    if let Some(t) = sub("mcmc") {
        check(t, MCMC_KEYS, "mcmc.", &mut out);
    }
    if let Some(t) = sub("grid") {
        check(t, GRID_KEYS, "grid.", &mut out);
    }
    if let Some(t) = sub("model") {
        unknown_model_keys(t, true, "model.", &mut out);
    }
    out
}

impl FitConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let table: toml::Table = text.parse().context("config is not valid TOML")?;
        let unknown = unknown_keys(&table);
        if !unknown.is_empty() {
            bail!("unknown config keys: {}", unknown.join(", "));
        }
        let cfg: FitConfig = table.try_into().context("invalid config")?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
        Self::from_toml_str(&text).with_context(|| format!("in {}", path.display()))
    }

    pub fn validate(&self) -> Result<()> {
        self.columns.validate()?;
        if self.mcmc.chains == 0 {
            bail!("mcmc.chains must be at least 1");
        }
        if self.mcmc.thin == 0 {
            bail!("mcmc.thin must be at least 1");
        }
        if self.model.variant.uses_instruments() && self.columns.instruments.is_empty() {
            bail!("variant {} needs at least one instrument column", self.model.variant.name());
        }
        if self.grid.t_points.is_none() && self.grid.n_t < 2 {
            bail!("grid.n_t must be at least 2");
        }
        for f in &self.grid.fixed {
            if !self.columns.covariates.contains(f) {
                bail!("fixed grid column '{f}' is not a covariate");
            }
        }
        if !self.grid.fixed.is_empty() && self.grid.profiles.is_empty() {
            bail!("grid.profiles must give values for the fixed covariates");
        }
        if let Some(p) = self.grid.profiles.iter().find(|p| p.len() != self.grid.fixed.len()) {
            bail!("grid profile {p:?} must have one value per fixed covariate ({})", self.grid.fixed.len());
        }
        self.model.validate().map_err(|e| anyhow!("model: {e}"))
    }

    /// Indices of the fixed covariates among `columns.covariates`.
    pub fn fixed_indices(&self) -> Vec<usize> {
        self.grid.fixed.iter().map(|f| self.columns.covariates.iter().position(|c| c == f).expect("validated")).collect()
    }

    /// Hash of everything that affects numeric output.
    pub fn hash(&self) -> String {
        let mut value = serde_json::to_value(self).expect("config serializes");
        if let Some(obj) = value.as_object_mut() {
            obj.remove("output");
        }
        ivbart::simlab::config_hash(&value)
    }
}
