//! Synthetic Mendelian-randomization data and the replication study runner.

mod study;

pub use study::{
    config_hash, run_study, unknown_model_keys, unknown_study_keys, GroupSummary, Method, MethodSpec, ReplicationRecord, StudyConfig,
    StudyMcmc, StudyOptions, StudyReport, StudyScenario, RECORDS_FILE,
};

use nalgebra::{DMatrix, Dyn};
use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{input, Error, Result};
use crate::ivmodels::{IVData, PdRequest};
use crate::rng::{stream, SimRng};
use crate::scalar::Scalar;

pub fn friedman_f1(z: &[f64]) -> f64 {
    assert!(z.len() >= 5, "the Friedman function needs five inputs");
    (std::f64::consts::PI * z[0] * z[1]).sin() + 2.0 * z[2] * z[2] + z[3] + 0.5 * z[4]
}

/// `c * (f - mean) / sd` over the sample (`n - 1` divisor).
pub fn standardize_signal(values: &[f64], c: f64) -> Result<Vec<f64>> {
    if c == 0.0 {
        return Ok(vec![0.0; values.len()]);
    }
    let n = values.len();
    if n < 2 {
        return input("standardization needs at least two values");
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    if !(var > 0.0) {
        return Err(Error::Input("first-stage signal has zero variance".into()));
    }
    let sd = var.sqrt();
    Ok(values.iter().map(|v| c * (v - mean) / sd).collect())
}

/// Outcome functions of the simulation designs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Truth {
    LinearG,
    NonlinearG,
    LinearH,
    NonlinearH,
}

pub fn true_f2(truth: Truth, t: f64, x1: f64) -> f64 {
    let on = if x1 >= 0.0 { 1.0 } else { 0.0 };
    match truth {
        Truth::LinearG => t + on,
        Truth::NonlinearG => t.cos() + on,
        Truth::LinearH => t * on,
        Truth::NonlinearH => t.cos() * on,
    }
}

/// Allele frequencies and latent (Gaussian-copula) correlation of the SNPs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenotypeModel {
    pub allele_freqs: Vec<f64>,
    pub latent_corr: Vec<Vec<f64>>,
}

impl GenotypeModel {
    /// Frequencies evenly spaced over `[0.15, 0.45]` and AR(1) latent
    /// correlation `0.6^|i-j|`.
    pub fn default_ld(n_snps: usize) -> Self {
        let allele_freqs = (0..n_snps)
            .map(|j| if n_snps == 1 { 0.3 } else { 0.15 + 0.30 * j as f64 / (n_snps - 1) as f64 })
            .collect();
        let latent_corr = (0..n_snps).map(|i| (0..n_snps).map(|j| 0.6f64.powi((i as i32 - j as i32).abs())).collect()).collect();
        Self { allele_freqs, latent_corr }
    }

    pub fn n_snps(&self) -> usize {
        self.allele_freqs.len()
    }

    fn cholesky(&self) -> Result<DMatrix<f64>> {
        let p = self.n_snps();
        if let Some(f) = self.allele_freqs.iter().find(|f| !(**f > 0.0 && **f < 1.0)) {
            return input(format!("allele frequency {f} outside (0, 1)"));
        }
        if self.latent_corr.len() != p || self.latent_corr.iter().any(|r| r.len() != p) {
            return input("latent correlation must be square with one row per SNP");
        }
        let m = DMatrix::from_fn(p, p, |i, j| self.latent_corr[i][j]);
        for i in 0..p {
            if (m[(i, i)] - 1.0).abs() > 1e-12 {
                return input("latent correlation must have a unit diagonal");
            }
            for j in 0..i {
                if (m[(i, j)] - m[(j, i)]).abs() > 1e-12 {
                    return input("latent correlation must be symmetric");
                }
            }
        }
        nalgebra::Cholesky::<f64, Dyn>::new(m)
            .map(|c| c.l())
            .ok_or_else(|| Error::Input("latent correlation is not positive definite".into()))
    }
}

/// Genotype counts (columns of 0/1/2). A latent correlated normal vector is
/// thresholded at the Hardy-Weinberg quantiles of each SNP's frequency.
pub fn simulate_genotypes<R: Rng + ?Sized>(n: usize, model: &GenotypeModel, rng: &mut R) -> Result<Vec<Vec<f64>>> {
    let l = model.cholesky()?;
    let p = model.n_snps();
    let std = Normal::standard();
    let cuts: Vec<(f64, f64)> = model
        .allele_freqs
        .iter()
        .map(|&f| (std.inverse_cdf((1.0 - f) * (1.0 - f)), std.inverse_cdf(1.0 - f * f)))
        .collect();
    let mut cols = vec![vec![0.0; n]; p];
    let mut e = vec![0.0; p];
    for i in 0..n {
        for v in e.iter_mut() {
            *v = f64::standard_normal(rng);
        }
        for j in 0..p {
            let u: f64 = (0..=j).map(|k| l[(j, k)] * e[k]).sum();
            let (a, b) = cuts[j];
            cols[j][i] = if u < a {
                0.0
            } else if u < b {
                1.0
            } else {
                2.0
            };
        }
    }
    Ok(cols)
}

/// One simulation design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimScenario {
    pub truth: Truth,
    pub rho: f64,
    pub c: f64,
    pub n: usize,
    pub n_snps: usize,
    pub n_x: usize,
    pub replications: usize,
    pub seed: u64,
    pub genotypes: Option<GenotypeModel>,
}

impl Default for SimScenario {
    fn default() -> Self {
        Self { truth: Truth::NonlinearH, rho: 0.7, c: 1.0, n: 1000, n_snps: 20, n_x: 10, replications: 1000, seed: 1, genotypes: None }
    }
}

impl SimScenario {
    pub fn validate(&self) -> Result<()> {
        if !(self.rho > -1.0 && self.rho < 1.0) {
            return Err(Error::Config(format!("rho must lie in (-1, 1), got {}", self.rho)));
        }
        if !(self.c >= 0.0) {
            return Err(Error::Config("c must be nonnegative".into()));
        }
        if self.n < 2 || self.n_snps < 5 || self.n_x < 1 {
            return Err(Error::Config("need n >= 2, n_snps >= 5 and n_x >= 1".into()));
        }
        if let Some(g) = &self.genotypes {
            if g.n_snps() != self.n_snps {
                return Err(Error::Config("genotype model size differs from n_snps".into()));
            }
        }
        Ok(())
    }

    pub fn genotype_model(&self) -> GenotypeModel {
        self.genotypes.clone().unwrap_or_else(|| GenotypeModel::default_ld(self.n_snps))
    }

    pub fn rng(&self, rep: usize) -> SimRng {
        stream(self.seed, &[rep as u64])
    }
}

/// Draw replication `rep` of a scenario. The first covariate drives the
/// heterogeneity of the truth; SNPs 1 to 5, halved to [0, 1], feed the
/// Friedman first stage.
pub fn generate_dataset(scenario: &SimScenario, rep: usize) -> Result<IVData> {
    scenario.validate()?;
    let mut rng = scenario.rng(rep);
    let n = scenario.n;
    let z = simulate_genotypes(n, &scenario.genotype_model(), &mut rng)?;
    let signal: Vec<f64> = (0..n).map(|i| friedman_f1(&[z[0][i] / 2.0, z[1][i] / 2.0, z[2][i] / 2.0, z[3][i] / 2.0, z[4][i] / 2.0])).collect();
    let signal = standardize_signal(&signal, scenario.c)?;
    let x: Vec<Vec<f64>> = (0..scenario.n_x).map(|_| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let rho = scenario.rho;
    let comp = (1.0 - rho * rho).sqrt();
    let mut t = vec![0.0; n];
    let mut y = vec![0.0; n];
    for i in 0..n {
        let e1 = f64::standard_normal(&mut rng);
        let e2 = f64::standard_normal(&mut rng);
        t[i] = signal[i] + e1;
        y[i] = true_f2(scenario.truth, t[i], x[0][i]) + rho * e1 + comp * e2;
    }
    Ok(IVData { y, t, z, x })
}

/// Exposure values crossed with values of the first covariate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalGrid {
    pub t_points: Vec<f64>,
    pub x1_points: Vec<f64>,
}

impl Default for EvalGrid {
    fn default() -> Self {
        Self { t_points: vec![-2.5, -1.25, 0.0, 1.25, 2.5], x1_points: vec![-0.5, 0.5] }
    }
}

impl EvalGrid {
    /// Points are ordered `x1`-major, matching [`PdRequest`].
    pub fn pd_request(&self) -> PdRequest {
        PdRequest { t_grid: self.t_points.clone(), fixed_x: vec![0], x_profiles: self.x1_points.iter().map(|&v| vec![v]).collect() }
    }

    pub fn points(&self) -> Vec<(f64, f64)> {
        self.x1_points.iter().flat_map(|&x| self.t_points.iter().map(move |&t| (t, x))).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationEval {
    /// Estimate minus truth at every grid point.
    pub bias: Vec<f64>,
    /// Root mean squared error over the exposure points, per `x1` value.
    pub rmse: Vec<f64>,
}

/// Compare posterior-mean partial dependence at the grid points with the truth.
pub fn evaluate_replication(pd_mean: &[f64], truth: Truth, grid: &EvalGrid) -> Result<ReplicationEval> {
    let pts = grid.points();
    if pd_mean.len() != pts.len() {
        return input(format!("{} estimates for {} grid points", pd_mean.len(), pts.len()));
    }
    let bias: Vec<f64> = pd_mean.iter().zip(&pts).map(|(e, &(t, x))| e - true_f2(truth, t, x)).collect();
    let k = grid.t_points.len();
    let rmse = bias.chunks(k).map(|b| (b.iter().map(|v| v * v).sum::<f64>() / k as f64).sqrt()).collect();
    Ok(ReplicationEval { bias, rmse })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn friedman_examples() {
        assert_eq!(friedman_f1(&[0.0; 5]), 0.0);
        let v = friedman_f1(&[0.5, 0.5, 1.0, 1.0, 1.0, 7.0]);
        assert!((v - (std::f64::consts::FRAC_PI_4.sin() + 3.5)).abs() < 1e-15);
        assert_eq!(friedman_f1(&[0.3, 0.2, 0.7, 0.1, 0.4]), friedman_f1(&[0.3, 0.2, -0.7, 0.1, 0.4]));
    }

    #[test]
    fn standardization() {
        let v: Vec<f64> = (0..50).map(|i| (i as f64).sqrt()).collect();
        assert!(standardize_signal(&v, 0.0).unwrap().iter().all(|&x| x == 0.0));
        for c in [1.0, 0.5] {
            let s = standardize_signal(&v, c).unwrap();
            let m = s.iter().sum::<f64>() / 50.0;
            let var = s.iter().map(|x| (x - m).powi(2)).sum::<f64>() / 49.0;
            assert!((var - c * c).abs() < 1e-12);
        }
        assert!(standardize_signal(&[1.0; 5], 1.0).is_err());
    }

    #[test]
    fn truths() {
        assert_eq!(true_f2(Truth::NonlinearH, 0.0, -0.5), 0.0);
        assert_eq!(true_f2(Truth::LinearG, 1.0, 0.5), 2.0);
        assert!((true_f2(Truth::NonlinearG, std::f64::consts::PI, -0.5) + 1.0).abs() < 1e-15);
        for t in [0.3, 1.7, 2.5] {
            for x in [-0.5, 0.5] {
                assert_eq!(true_f2(Truth::NonlinearG, -t, x), true_f2(Truth::NonlinearG, t, x));
                assert_eq!(true_f2(Truth::NonlinearH, -t, x), true_f2(Truth::NonlinearH, t, x));
                let on = if x >= 0.0 { 1.0 } else { 0.0 };
                assert!((true_f2(Truth::LinearG, -t, x) - on + (true_f2(Truth::LinearG, t, x) - on)).abs() < 1e-15);
                assert_eq!(true_f2(Truth::LinearH, -t, x), -true_f2(Truth::LinearH, t, x));
            }
        }
    }

    #[test]
    fn non_spd_correlation_is_rejected() {
        let model = GenotypeModel { allele_freqs: vec![0.3, 0.3], latent_corr: vec![vec![1.0, 1.5], vec![1.5, 1.0]] };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(simulate_genotypes(10, &model, &mut rng).is_err());
    }

    #[test]
    fn rmse_of_zero_fit() {
        let grid = EvalGrid::default();
        let r = evaluate_replication(&[0.0; 10], Truth::LinearH, &grid).unwrap();
        assert!((r.rmse[1] - (2.0 * (6.25 + 1.5625) / 5.0f64).sqrt()).abs() < 1e-12);
        assert!((r.rmse[1] - 1.7678).abs() < 1e-4);
        assert_eq!(r.rmse[0], 0.0);
    }
}
