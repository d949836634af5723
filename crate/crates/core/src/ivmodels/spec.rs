use serde::{Deserialize, Serialize};

use crate::error::{input, Error, Result};
use crate::treekit::{TreePriorConfig, DEFAULT_CUTS};

/// Functional form of the outcome equation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    /// One ensemble over `(t, x)`.
    #[serde(rename = "npivbart-h")]
    NpivBartH,
    /// `f21(t) + f22(x)`, two ensembles.
    #[serde(rename = "npivbart-g")]
    NpivBartG,
    /// An ensemble over `x` whose leaves are lines in `t`.
    #[serde(rename = "ivbart-h")]
    IvBartH,
    /// `beta * t + f22(x)`.
    #[serde(rename = "ivbart-g")]
    IvBartG,
    /// An ensemble over `(t, x)` ignoring instruments and error coupling.
    #[serde(rename = "bart")]
    PlainBart,
}

impl Variant {
    pub const ALL: [Variant; 5] = [Variant::NpivBartH, Variant::NpivBartG, Variant::IvBartH, Variant::IvBartG, Variant::PlainBart];

    pub fn name(&self) -> &'static str {
        match self {
            Variant::NpivBartH => "npivbart-h",
            Variant::NpivBartG => "npivbart-g",
            Variant::IvBartH => "ivbart-h",
            Variant::IvBartG => "ivbart-g",
            Variant::PlainBart => "bart",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.name() == name)
            .ok_or_else(|| Error::Config(format!("unknown model variant `{name}`")))
    }

    pub fn uses_instruments(&self) -> bool {
        !matches!(self, Variant::PlainBart)
    }

    pub fn has_beta(&self) -> bool {
        matches!(self, Variant::IvBartG)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ErrorModel {
    BivariateNormal,
    Dpm,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DpmSettings {
    pub alpha_shape: f64,
    pub alpha_rate: f64,
    pub alpha_init: f64,
    pub update_alpha: bool,
}

impl Default for DpmSettings {
    fn default() -> Self {
        Self { alpha_shape: 2.0, alpha_rate: 2.0, alpha_init: 1.0, update_alpha: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelSpec {
    pub variant: Variant,
    pub k_stage1: f64,
    pub k_stage2: f64,
    pub trees_stage1: usize,
    pub trees_stage2: usize,
    pub error_model: ErrorModel,
    pub n_cuts: usize,
    pub tree_prior: TreePriorConfig,
    /// Inverse-Wishart degrees of freedom; the scale is `(dof - 3)` times the
    /// diagonal of OLS residual variances.
    pub iw_dof: f64,
    pub dpm: DpmSettings,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self {
            variant: Variant::NpivBartH,
            k_stage1: 2.0,
            k_stage2: 2.0,
            trees_stage1: 200,
            trees_stage2: 200,
            error_model: ErrorModel::BivariateNormal,
            n_cuts: DEFAULT_CUTS,
            tree_prior: TreePriorConfig::default(),
            iw_dof: 6.0,
            dpm: DpmSettings::default(),
        }
    }
}

impl ModelSpec {
    pub fn with_variant(variant: Variant) -> Self {
        Self { variant, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.k_stage1 > 0.0 && self.k_stage2 > 0.0) {
            return Err(Error::Config("k_stage1 and k_stage2 must be positive".into()));
        }
        if self.trees_stage1 == 0 || self.trees_stage2 == 0 {
            return Err(Error::Config("tree counts must be at least 1".into()));
        }
        if self.n_cuts == 0 || self.n_cuts > u16::MAX as usize - 1 {
            return Err(Error::Config(format!("n_cuts must lie in 1..{}", u16::MAX - 1)));
        }
        if !(self.iw_dof > 3.0) {
            return Err(Error::Config("iw_dof must exceed 3".into()));
        }
        if self.error_model == ErrorModel::Dpm {
            if self.variant == Variant::PlainBart {
                return Err(Error::Config("the plain BART variant has no error-pair model".into()));
            }
            if !(self.dpm.alpha_shape > 0.0 && self.dpm.alpha_rate > 0.0 && self.dpm.alpha_init > 0.0) {
                return Err(Error::Config("dpm alpha prior and initial value must be positive".into()));
            }
        }
        self.tree_prior.validate()
    }
}

/// Observed data. Instruments and covariates are stored column by column.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct IVData {
    pub y: Vec<f64>,
    pub t: Vec<f64>,
    pub z: Vec<Vec<f64>>,
    pub x: Vec<Vec<f64>>,
}

impl IVData {
    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn validate(&self, needs_instruments: bool) -> Result<()> {
        let n = self.y.len();
        if n == 0 {
            return input("empty data");
        }
        if self.t.len() != n {
            return input(format!("exposure has {} rows, outcome has {n}", self.t.len()));
        }
        if needs_instruments && self.z.is_empty() {
            return input("at least one instrument column required");
        }
        let named = std::iter::once(("y", 0, &self.y))
            .chain(std::iter::once(("t", 0, &self.t)))
            .chain(self.z.iter().enumerate().map(|(j, c)| ("z", j + 1, c)))
            .chain(self.x.iter().enumerate().map(|(j, c)| ("x", j + 1, c)));
        for (name, j, col) in named {
            let label = if j == 0 { name.to_string() } else { format!("{name}{j}") };
            if col.len() != n {
                return input(format!("column {label} has {} rows, expected {n}", col.len()));
            }
            if let Some(i) = col.iter().position(|v| !v.is_finite()) {
                return input(format!("column {label} row {i} is not finite"));
            }
        }
        Ok(())
    }

    /// Row `i` of the covariates.
    pub fn x_row(&self, i: usize) -> Vec<f64> {
        self.x.iter().map(|c| c[i]).collect()
    }

    pub fn x_rows(&self) -> Vec<Vec<f64>> {
        (0..self.n()).map(|i| self.x_row(i)).collect()
    }
}
