//! 2×2 covariance matrices and the inverse-Wishart distribution on them.

use rand::Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Symmetric 2×2 matrix `[[tt, ty], [ty, yy]]` for the (exposure, outcome)
/// error pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sym2 {
    pub tt: f64,
    pub ty: f64,
    pub yy: f64,
}

impl Sym2 {
    pub const fn new(tt: f64, ty: f64, yy: f64) -> Self {
        Self { tt, ty, yy }
    }

    pub const fn diag(tt: f64, yy: f64) -> Self {
        Self { tt, ty: 0.0, yy }
    }

    pub fn identity() -> Self {
        Self::diag(1.0, 1.0)
    }

    pub fn from_corr(sd_t: f64, sd_y: f64, rho: f64) -> Self {
        Self::new(sd_t * sd_t, rho * sd_t * sd_y, sd_y * sd_y)
    }

    pub fn outer(e: [f64; 2]) -> Self {
        Self::new(e[0] * e[0], e[0] * e[1], e[1] * e[1])
    }

    #[inline]
    pub fn det(&self) -> f64 {
        self.tt * self.yy - self.ty * self.ty
    }

    pub fn is_spd(&self) -> bool {
        self.tt > 0.0 && self.yy > 0.0 && self.det() > 0.0 && self.tt.is_finite() && self.yy.is_finite() && self.ty.is_finite()
    }

    pub fn inverse(&self) -> Self {
        let d = self.det();
        Self::new(self.yy / d, -self.ty / d, self.tt / d)
    }

    pub fn scale(&self, c: f64) -> Self {
        Self::new(self.tt * c, self.ty * c, self.yy * c)
    }

    pub fn add(&self, o: &Self) -> Self {
        Self::new(self.tt + o.tt, self.ty + o.ty, self.yy + o.yy)
    }

    #[inline]
    pub fn quad(&self, e: [f64; 2]) -> f64 {
        self.tt * e[0] * e[0] + 2.0 * self.ty * e[0] * e[1] + self.yy * e[1] * e[1]
    }

    pub fn rho(&self) -> f64 {
        self.ty / (self.tt * self.yy).sqrt()
    }

    /// Lower Cholesky factor `(l11, l21, l22)`.
    pub fn cholesky(&self) -> Result<(f64, f64, f64)> {
        if !self.is_spd() {
            return Err(Error::Invariant(format!("matrix {self:?} is not positive definite")));
        }
        let l11 = self.tt.sqrt();
        let l21 = self.ty / l11;
        let l22 = (self.yy - l21 * l21).sqrt();
        Ok((l11, l21, l22))
    }

    /// `log N2(e; 0, self)`.
    pub fn log_normal_density(&self, e: [f64; 2]) -> f64 {
        -LN_2PI - 0.5 * self.det().ln() - 0.5 * self.inverse().quad(e)
    }
}

/// Inverse-Wishart prior `IW(dof, scale)` on a 2×2 covariance; its mean is
/// `scale / (dof - 3)` when `dof > 3`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IWPrior {
    pub dof: f64,
    pub scale: Sym2,
}

impl IWPrior {
    pub fn new(dof: f64, scale: Sym2) -> Result<Self> {
        let p = Self { dof, scale };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dof > 1.0) {
            return Err(Error::Invariant(format!("inverse-Wishart dof must exceed 1, got {}", self.dof)));
        }
        if !self.scale.is_spd() {
            return Err(Error::Invariant("inverse-Wishart scale must be positive definite".into()));
        }
        Ok(())
    }

    pub fn mean(&self) -> Option<Sym2> {
        (self.dof > 3.0).then(|| self.scale.scale(1.0 / (self.dof - 3.0)))
    }

    /// Conjugate update with zero-mean observations of total scatter `scatter`.
    pub fn posterior(&self, n: usize, scatter: &Sym2) -> Self {
        Self { dof: self.dof + n as f64, scale: self.scale.add(scatter) }
    }

    /// Draw via the Bartlett decomposition of the Wishart precision.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Sym2 {
        let (l11, l21, l22) = self.scale.inverse().cholesky().expect("validated scale");
        let a11 = ChiSquared::new(self.dof).expect("dof").sample(rng).sqrt();
        let a22 = ChiSquared::new(self.dof - 1.0).expect("dof").sample(rng).sqrt();
        let a21: f64 = StandardNormal.sample(rng);
        // B = L A, W = B B'
        let b11 = l11 * a11;
        let b21 = l21 * a11 + l22 * a21;
        let b22 = l22 * a22;
        let w = Sym2::new(b11 * b11, b11 * b21, b21 * b21 + b22 * b22);
        w.inverse()
    }
}

/// Draw from `IW(dof + n, scale + Σ e eᵀ)` given zero-mean residual pairs.
pub fn update_sigma_iw<R: Rng + ?Sized>(residuals: &[[f64; 2]], prior: &IWPrior, rng: &mut R) -> Sym2 {
    let scatter = scatter(residuals);
    prior.posterior(residuals.len(), &scatter).sample(rng)
}

pub fn scatter(residuals: &[[f64; 2]]) -> Sym2 {
    residuals.iter().fold(Sym2::new(0.0, 0.0, 0.0), |acc, e| acc.add(&Sym2::outer(*e)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn inverse_and_density() {
        let s = Sym2::new(2.0, 0.6, 1.0);
        let i = s.inverse();
        assert!((s.tt * i.tt + s.ty * i.ty - 1.0).abs() < 1e-15);
        assert!((s.tt * i.ty + s.ty * i.yy).abs() < 1e-15);
        let e = [0.3, -0.4];
        let direct = -(2.0 * std::f64::consts::PI).ln() - 0.5 * s.det().ln() - 0.5 * i.quad(e);
        assert!((s.log_normal_density(e) - direct).abs() < 1e-15);
    }

    #[test]
    fn samples_are_spd_and_centered() {
        let prior = IWPrior::new(8.0, Sym2::new(5.0, 2.0, 5.0)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 50_000;
        let mut acc = Sym2::new(0.0, 0.0, 0.0);
        for _ in 0..n {
            let s = prior.sample(&mut rng);
            assert!(s.is_spd());
            acc = acc.add(&s.scale(1.0 / n as f64));
        }
        let m = prior.mean().unwrap();
        assert!((acc.tt / m.tt - 1.0).abs() < 0.03, "{acc:?} vs {m:?}");
        assert!((acc.ty / m.ty - 1.0).abs() < 0.05);
        assert!((acc.yy / m.yy - 1.0).abs() < 0.03);
    }

    #[test]
    fn zero_residuals_leave_the_scale_unchanged() {
        let prior = IWPrior::new(6.0, Sym2::identity()).unwrap();
        let post = prior.posterior(4, &scatter(&[[0.0, 0.0]; 4]));
        assert_eq!(post.dof, 10.0);
        assert_eq!(post.scale, Sym2::identity());
    }

    #[test]
    fn rejects_bad_priors() {
        assert!(IWPrior::new(0.5, Sym2::identity()).is_err());
        assert!(IWPrior::new(6.0, Sym2::new(1.0, 2.0, 1.0)).is_err());
    }
}
