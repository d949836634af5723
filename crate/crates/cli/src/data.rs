//! CSV ingestion and export of IV datasets.

use std::collections::HashSet;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use ivbart::ivmodels::IVData;
use serde::{Deserialize, Serialize};

/// Which CSV columns play which role.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ColumnRoles {
    pub outcome: String,
    pub exposure: String,
    pub instruments: Vec<String>,
    pub covariates: Vec<String>,
}

impl Default for ColumnRoles {
    fn default() -> Self {
        Self { outcome: "y".into(), exposure: "t".into(), instruments: Vec::new(), covariates: Vec::new() }
    }
}

impl ColumnRoles {
    pub fn all(&self) -> Vec<&str> {
        let mut v = vec![self.outcome.as_str(), self.exposure.as_str()];
        v.extend(self.instruments.iter().map(String::as_str));
        v.extend(self.covariates.iter().map(String::as_str));
        v
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for name in self.all() {
            if !seen.insert(name) {
                bail!("column '{name}' is given more than one role");
            }
        }
        Ok(())
    }
}

fn parse_cell(cell: &str, line: u64, name: &str) -> Result<f64> {
    let trimmed = cell.trim();
    if trimmed.is_empty() {
        bail!("line {line}, column '{name}': missing value");
    }
    let v: f64 = trimmed.parse().map_err(|_| anyhow!("line {line}, column '{name}': cannot parse '{trimmed}' as a number"))?;
    if !v.is_finite() {
        bail!("line {line}, column '{name}': value '{trimmed}' is not finite");
    }
    Ok(v)
}

/// Read the columns named in `roles` from a headed CSV file.
///
/// Every cell of a used column must parse as a finite number; line numbers
/// in errors count the header as line 1.
pub fn read_dataset(path: &Path, roles: &ColumnRoles) -> Result<IVData> {
    roles.validate()?;
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)
        .with_context(|| format!("cannot open data file {}", path.display()))?;
    let header = reader.headers()?.clone();
    let index_of = |name: &str| -> Result<usize> {
        header.iter().position(|h| h.trim() == name).ok_or_else(|| anyhow!("column '{name}' not found in {}", path.display()))
    };
    let y_col = index_of(&roles.outcome)?;
    let t_col = index_of(&roles.exposure)?;
    let z_cols = roles.instruments.iter().map(|c| index_of(c)).collect::<Result<Vec<_>>>()?;
    let x_cols = roles.covariates.iter().map(|c| index_of(c)).collect::<Result<Vec<_>>>()?;

    let mut data = IVData {
        y: Vec::new(),
        t: Vec::new(),
        z: vec![Vec::new(); z_cols.len()],
        x: vec![Vec::new(); x_cols.len()],
    };
    for record in reader.records() {
        let record = record.context("malformed CSV row")?;
        let line = record.position().map_or(0, |p| p.line());
        let cell = |col: usize| -> Result<f64> {
            let name = &header[col];
            parse_cell(record.get(col).unwrap_or(""), line, name)
        };
        data.y.push(cell(y_col)?);
        data.t.push(cell(t_col)?);
        for (dst, &c) in data.z.iter_mut().zip(&z_cols) {
            dst.push(cell(c)?);
        }
        for (dst, &c) in data.x.iter_mut().zip(&x_cols) {
            dst.push(cell(c)?);
        }
    }
    if data.y.is_empty() {
        bail!("data file {} has no rows", path.display());
    }
    Ok(data)
}

/// Column names used by `write_dataset`: `y`, `t`, `z1..`, `x1..`.
pub fn default_roles(data: &IVData) -> ColumnRoles {
    ColumnRoles {
        outcome: "y".into(),
        exposure: "t".into(),
        instruments: (1..=data.z.len()).map(|j| format!("z{j}")).collect(),
        covariates: (1..=data.x.len()).map(|j| format!("x{j}")).collect(),
    }
}

/// Write a dataset with full float precision.
pub fn write_dataset(path: &Path, data: &IVData) -> Result<()> {
    let roles = default_roles(data);
    let mut w = csv::Writer::from_path(path).with_context(|| format!("cannot create {}", path.display()))?;
    w.write_record(roles.all())?;
    for i in 0..data.n() {
        let row = [data.y[i], data.t[i]]
            .into_iter()
            .chain(data.z.iter().map(|c| c[i]))
            .chain(data.x.iter().map(|c| c[i]))
            .map(|v| v.to_string());
        w.write_record(row)?;
    }
    w.flush()?;
    Ok(())
}
