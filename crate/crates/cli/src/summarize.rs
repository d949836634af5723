//! The `summarize` command.

use std::fs::File;
use std::io::BufReader;
use std::path::Path;

use anyhow::{Context, Result};
use ivbart::ivmodels::read_draws;

use crate::report::{summary_report, SummaryReport};

pub fn cmd_summarize(draws_path: &Path) -> Result<SummaryReport> {
    let file = File::open(draws_path).with_context(|| format!("cannot open draw file {}", draws_path.display()))?;
    let (header, draws) = read_draws(BufReader::new(file)).with_context(|| format!("cannot read {}", draws_path.display()))?;
    Ok(summary_report(&draws, header.seed, &header.config_hash))
}
