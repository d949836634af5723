use serde::{Deserialize, Serialize};

use super::spec::Variant;
use crate::error::{input, Result};
use crate::Ensemble;

/// The outcome function of one draw, without its offset.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum F2Model {
    /// Ensemble over `[t, x1, .., xp]`.
    Joint { ensemble: Ensemble },
    /// Ensemble over `[t]` plus ensemble over `[x1, .., xp]`.
    Additive { exposure: Ensemble, covariates: Ensemble },
    /// Line-leaf ensemble over `[x1, .., xp]` with slope on `t`.
    LineLeaves { ensemble: Ensemble },
    /// `beta * t` plus an ensemble over `[x1, .., xp]`.
    Linear { beta: f64, covariates: Ensemble },
}

/// `f2(t, x) = offset + model(t, x)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct F2Snapshot {
    pub offset: f64,
    pub model: F2Model,
}

impl F2Snapshot {
    pub fn variant_matches(&self, variant: Variant) -> bool {
        matches!(
            (&self.model, variant),
            (F2Model::Joint { .. }, Variant::NpivBartH | Variant::PlainBart)
                | (F2Model::Additive { .. }, Variant::NpivBartG)
                | (F2Model::LineLeaves { .. }, Variant::IvBartH)
                | (F2Model::Linear { .. }, Variant::IvBartG)
        )
    }

    /// `f2` at one exposure value and covariate row.
    pub fn evaluate(&self, t: f64, x: &[f64]) -> Result<f64> {
        let joint_row = || std::iter::once(t).chain(x.iter().copied()).collect::<Vec<f64>>();
        let rows = |r: Vec<f64>| vec![r];
        let value = match &self.model {
            F2Model::Joint { ensemble } => ensemble.predict(&rows(joint_row()), None)?[0],
            F2Model::Additive { exposure, covariates } => {
                exposure.predict(&rows(vec![t]), None)?[0] + covariates.predict(&rows(x.to_vec()), None)?[0]
            }
            F2Model::LineLeaves { ensemble } => ensemble.predict(&rows(x.to_vec()), Some(&[t]))?[0],
            F2Model::Linear { beta, covariates } => beta * t + covariates.predict(&rows(x.to_vec()), None)?[0],
        };
        Ok(self.offset + value)
    }

    /// Partial dependence at `(t, x_fixed)` points, averaging over the
    /// non-fixed covariates of `background` (covariate rows).
    pub fn partial_dependence(&self, points: &[(f64, Vec<f64>)], fixed_x: &[usize], background: &[Vec<f64>]) -> Result<Vec<f64>> {
        if background.is_empty() {
            return input("partial dependence needs at least one background row");
        }
        if points.iter().any(|(_, p)| p.len() != fixed_x.len()) {
            return input("each point must give one value per fixed covariate");
        }
        let x_points: Vec<Vec<f64>> = points.iter().map(|(_, p)| p.clone()).collect();
        let ts: Vec<f64> = points.iter().map(|(t, _)| *t).collect();
        let values = match &self.model {
            F2Model::Joint { ensemble } => {
                let fixed: Vec<usize> = std::iter::once(0).chain(fixed_x.iter().map(|j| j + 1)).collect();
                let pts: Vec<Vec<f64>> = points.iter().map(|(t, p)| std::iter::once(*t).chain(p.iter().copied()).collect()).collect();
                let bg: Vec<Vec<f64>> = background.iter().map(|r| std::iter::once(0.0).chain(r.iter().copied()).collect()).collect();
                ensemble.partial_dependence(&fixed, &pts, None, &bg)?
            }
            F2Model::Additive { exposure, covariates } => {
                let t_pts: Vec<Vec<f64>> = ts.iter().map(|&t| vec![t]).collect();
                let a = exposure.partial_dependence(&[0], &t_pts, None, &[vec![0.0]])?;
                let b = covariates.partial_dependence(fixed_x, &x_points, None, background)?;
                a.iter().zip(&b).map(|(u, v)| u + v).collect()
            }
            F2Model::LineLeaves { ensemble } => ensemble.partial_dependence(fixed_x, &x_points, Some(&ts), background)?,
            F2Model::Linear { beta, covariates } => {
                let b = covariates.partial_dependence(fixed_x, &x_points, None, background)?;
                ts.iter().zip(&b).map(|(t, v)| beta * t + v).collect()
            }
        };
        Ok(values.into_iter().map(|v| v + self.offset).collect())
    }
}
