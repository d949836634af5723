//! The `simulate` command.

use std::path::Path;

use anyhow::{Context, Result};
use ivbart::simlab::{run_study, StudyConfig, StudyOptions, StudyReport};

pub fn cmd_simulate(config_path: &Path, seed: Option<u64>, out_dir: &Path, opts: &StudyOptions) -> Result<StudyReport> {
    let text = std::fs::read_to_string(config_path).with_context(|| format!("cannot read config {}", config_path.display()))?;
    let mut cfg = StudyConfig::from_toml_str(&text).with_context(|| format!("in {}", config_path.display()))?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(run_study(&cfg, out_dir, opts)?)
}
