//! Exponential-family parameter records, densities, sampling, moments and
//! conjugate updates in the standard basis.
//!
//! Points are passed as flat slices: one entry for scalar families, `K`
//! entries for the Dirichlet and `p²` row-major entries for the Wisharts.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta as BetaDist, Distribution, Exp, Gamma as GammaDist, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::{digamma, ln_gamma};

use crate::error::{Error, Result};
use crate::matrixops::{self, is_positive_definite, is_symmetric, log_det_spd, spd_inverse, symmetrize};

/// Family tag shared by parameter records, bridges and the CLI.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Exponential,
    Gamma,
    InverseGamma,
    ChiSquared,
    Beta,
    Dirichlet,
    Wishart,
    InverseWishart,
}

impl Family {
    pub const ALL: [Family; 8] = [
        Family::Exponential,
        Family::Gamma,
        Family::InverseGamma,
        Family::ChiSquared,
        Family::Beta,
        Family::Dirichlet,
        Family::Wishart,
        Family::InverseWishart,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Family::Exponential => "exponential",
            Family::Gamma => "gamma",
            Family::InverseGamma => "inverse_gamma",
            Family::ChiSquared => "chi_squared",
            Family::Beta => "beta",
            Family::Dirichlet => "dirichlet",
            Family::Wishart => "wishart",
            Family::InverseWishart => "inverse_wishart",
        }
    }

    pub fn parse(s: &str) -> Option<Family> {
        let s = s.to_ascii_lowercase().replace('-', "_");
        Family::ALL.into_iter().find(|f| {
            f.name() == s
                || matches!(
                    (f, s.as_str()),
                    (Family::InverseGamma, "invgamma" | "inv_gamma")
                        | (Family::ChiSquared, "chi2" | "chisquared")
                        | (Family::InverseWishart, "invwishart" | "inv_wishart")
                        | (Family::Exponential, "exp")
                )
        })
    }

    pub fn is_scalar(self) -> bool {
        !matches!(self, Family::Dirichlet | Family::Wishart | Family::InverseWishart)
    }

    pub fn is_matrix(self) -> bool {
        matches!(self, Family::Wishart | Family::InverseWishart)
    }
}

impl std::fmt::Display for Family {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

mod matrix_rows {
    use nalgebra::DMatrix;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        let rows: Vec<Vec<f64>> = (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect();
        rows.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
        let rows: Vec<Vec<f64>> = Vec::deserialize(d)?;
        let n = rows.len();
        let m = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != m) {
            return Err(serde::de::Error::custom("ragged matrix rows"));
        }
        Ok(DMatrix::from_fn(n, m, |i, j| rows[i][j]))
    }
}

/// Parameters of one of the eight supported families.
///
/// Gamma and InverseGamma use the rate `λ`; Wishart is `W(n, V)` with
/// `E[X] = nV`; InverseWishart is `IW(ν, Ψ)` with mode `Ψ/(ν+p+1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum EFParams {
    Exponential {
        lambda: f64,
    },
    Gamma {
        alpha: f64,
        lambda: f64,
    },
    InverseGamma {
        alpha: f64,
        lambda: f64,
    },
    ChiSquared {
        k: f64,
    },
    Beta {
        alpha: f64,
        beta: f64,
    },
    Dirichlet {
        alpha: Vec<f64>,
    },
    Wishart {
        n: f64,
        #[serde(with = "matrix_rows")]
        v: DMatrix<f64>,
    },
    InverseWishart {
        nu: f64,
        #[serde(with = "matrix_rows")]
        psi: DMatrix<f64>,
    },
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidParams(format!("{name} must be a positive finite real, got {v}")))
    }
}

fn spd_param(name: &str, m: &DMatrix<f64>) -> Result<()> {
    if !m.is_square() || m.nrows() == 0 {
        return Err(Error::InvalidParams(format!("{name} must be a non-empty square matrix")));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParams(format!("{name} has non-finite entries")));
    }
    if !is_symmetric(m) {
        return Err(Error::InvalidParams(format!("{name} is not symmetric")));
    }
    if !is_positive_definite(m) {
        return Err(Error::InvalidParams(format!("{name} is not positive definite")));
    }
    Ok(())
}

/// `log Γ_p(a)`.
pub fn ln_mvgamma(p: usize, a: f64) -> f64 {
    let pf = p as f64;
    pf * (pf - 1.0) / 4.0 * std::f64::consts::PI.ln()
        + (1..=p).map(|j| ln_gamma(a + (1.0 - j as f64) / 2.0)).sum::<f64>()
}

pub fn ln_beta(a: f64, b: f64) -> f64 {
    ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b)
}

impl EFParams {
    pub fn family(&self) -> Family {
        match self {
            EFParams::Exponential { .. } => Family::Exponential,
            EFParams::Gamma { .. } => Family::Gamma,
            EFParams::InverseGamma { .. } => Family::InverseGamma,
            EFParams::ChiSquared { .. } => Family::ChiSquared,
            EFParams::Beta { .. } => Family::Beta,
            EFParams::Dirichlet { .. } => Family::Dirichlet,
            EFParams::Wishart { .. } => Family::Wishart,
            EFParams::InverseWishart { .. } => Family::InverseWishart,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            EFParams::Exponential { lambda } => positive("lambda", *lambda),
            EFParams::Gamma { alpha, lambda } | EFParams::InverseGamma { alpha, lambda } => {
                positive("alpha", *alpha)?;
                positive("lambda", *lambda)
            }
            EFParams::ChiSquared { k } => positive("k", *k),
            EFParams::Beta { alpha, beta } => {
                positive("alpha", *alpha)?;
                positive("beta", *beta)
            }
            EFParams::Dirichlet { alpha } => {
                if alpha.len() < 2 {
                    return Err(Error::InvalidParams(format!(
                        "Dirichlet needs K >= 2 components, got {}",
                        alpha.len()
                    )));
                }
                alpha.iter().try_for_each(|&a| positive("alpha_k", a))
            }
            EFParams::Wishart { n, v } => {
                spd_param("V", v)?;
                let p = v.nrows() as f64;
                if !(n.is_finite() && *n > p - 1.0) {
                    return Err(Error::InvalidParams(format!("Wishart needs n > p-1 = {}, got {n}", p - 1.0)));
                }
                Ok(())
            }
            EFParams::InverseWishart { nu, psi } => {
                spd_param("Psi", psi)?;
                let p = psi.nrows() as f64;
                if !(nu.is_finite() && *nu > p - 1.0) {
                    return Err(Error::InvalidParams(format!(
                        "inverse Wishart needs nu > p-1 = {}, got {nu}",
                        p - 1.0
                    )));
                }
                Ok(())
            }
        }
    }

    /// Length of the flat point representation.
    pub fn point_dim(&self) -> usize {
        match self {
            EFParams::Dirichlet { alpha } => alpha.len(),
            EFParams::Wishart { v, .. } => v.nrows() * v.nrows(),
            EFParams::InverseWishart { psi, .. } => psi.nrows() * psi.nrows(),
            _ => 1,
        }
    }

    /// Matrix dimension `p` for the Wisharts, `K` for the Dirichlet, else 1.
    pub fn dim(&self) -> usize {
        match self {
            EFParams::Dirichlet { alpha } => alpha.len(),
            EFParams::Wishart { v, .. } => v.nrows(),
            EFParams::InverseWishart { psi, .. } => psi.nrows(),
            _ => 1,
        }
    }
}

fn support_err(msg: impl Into<String>) -> Error {
    Error::OutOfSupport(msg.into())
}

fn check_len(x: &[f64], n: usize) -> Result<()> {
    if x.len() != n {
        return Err(Error::DimensionMismatch(format!("point has {} entries, expected {n}", x.len())));
    }
    Ok(())
}

fn matrix_point(x: &[f64], p: usize) -> Result<DMatrix<f64>> {
    check_len(x, p * p)?;
    let m = matrixops::unvec_rm(x, p);
    if !is_symmetric(&m) || !is_positive_definite(&m) {
        return Err(support_err("matrix point is not symmetric positive definite"));
    }
    Ok(symmetrize(&m))
}

/// Log-density in the standard basis (Lebesgue on the first `K-1`
/// simplex coordinates for the Dirichlet, on half-vectorized entries for
/// the Wisharts).
pub fn log_pdf(params: &EFParams, x: &[f64]) -> Result<f64> {
    params.validate()?;
    log_pdf_unchecked(params, x)
}

/// [`log_pdf`] without re-validating parameters.
pub fn log_pdf_unchecked(params: &EFParams, x: &[f64]) -> Result<f64> {
    match params {
        EFParams::Exponential { lambda } => {
            check_len(x, 1)?;
            let x = x[0];
            if !(x > 0.0 && x.is_finite()) {
                return Err(support_err(format!("exponential needs x > 0, got {x}")));
            }
            Ok(lambda.ln() - lambda * x)
        }
        EFParams::Gamma { alpha, lambda } => {
            check_len(x, 1)?;
            let x = x[0];
            if !(x > 0.0 && x.is_finite()) {
                return Err(support_err(format!("gamma needs x > 0, got {x}")));
            }
            Ok(alpha * lambda.ln() - ln_gamma(*alpha) + (alpha - 1.0) * x.ln() - lambda * x)
        }
        EFParams::InverseGamma { alpha, lambda } => {
            check_len(x, 1)?;
            let x = x[0];
            if !(x > 0.0 && x.is_finite()) {
                return Err(support_err(format!("inverse gamma needs x > 0, got {x}")));
            }
            Ok(alpha * lambda.ln() - ln_gamma(*alpha) - (alpha + 1.0) * x.ln() - lambda / x)
        }
        EFParams::ChiSquared { k } => {
            check_len(x, 1)?;
            let x = x[0];
            if !(x > 0.0 && x.is_finite()) {
                return Err(support_err(format!("chi-squared needs x > 0, got {x}")));
            }
            let h = k / 2.0;
            Ok((h - 1.0) * x.ln() - x / 2.0 - h * 2f64.ln() - ln_gamma(h))
        }
        EFParams::Beta { alpha, beta } => {
            check_len(x, 1)?;
            let x = x[0];
            if !(x > 0.0 && x < 1.0) {
                return Err(support_err(format!("beta needs 0 < x < 1, got {x}")));
            }
            Ok((alpha - 1.0) * x.ln() + (beta - 1.0) * (-x).ln_1p() - ln_beta(*alpha, *beta))
        }
        EFParams::Dirichlet { alpha } => {
            check_len(x, alpha.len())?;
            if x.iter().any(|&v| !(v > 0.0 && v < 1.0)) || (x.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                return Err(support_err("dirichlet needs a point in the open simplex"));
            }
            let a0: f64 = alpha.iter().sum();
            let log_norm = ln_gamma(a0) - alpha.iter().map(|&a| ln_gamma(a)).sum::<f64>();
            Ok(log_norm + alpha.iter().zip(x).map(|(a, v)| (a - 1.0) * v.ln()).sum::<f64>())
        }
        EFParams::Wishart { n, v } => {
            let p = v.nrows();
            let xm = matrix_point(x, p)?;
            let pf = p as f64;
            let vinv = spd_inverse(v)?;
            let tr = (vinv * &xm).trace();
            Ok((n - pf - 1.0) / 2.0 * log_det_spd(&xm)?
                - tr / 2.0
                - n * pf / 2.0 * 2f64.ln()
                - n / 2.0 * log_det_spd(v)?
                - ln_mvgamma(p, n / 2.0))
        }
        EFParams::InverseWishart { nu, psi } => {
            let p = psi.nrows();
            let xm = matrix_point(x, p)?;
            let pf = p as f64;
            let xinv = spd_inverse(&xm)?;
            let tr = (psi * xinv).trace();
            Ok(nu / 2.0 * log_det_spd(psi)?
                - nu * pf / 2.0 * 2f64.ln()
                - ln_mvgamma(p, nu / 2.0)
                - (nu + pf + 1.0) / 2.0 * log_det_spd(&xm)?
                - tr / 2.0)
        }
    }
}

/// Canonical exponential-family form `h(x)·exp(wᵀφ(x) − log Z)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CanonicalEF {
    pub family: Family,
    /// Natural parameters `w`, laid out to match [`CanonicalEF::sufficient_stats`].
    pub natural: Vec<f64>,
    pub log_partition: f64,
    /// Dimension `p` or `K` (1 for scalar families).
    pub dim: usize,
}

impl CanonicalEF {
    /// Sufficient statistics `φ(x)`.
    ///
    /// Exponential `x`; Gamma `(log x, x)`; InverseGamma `(log x, 1/x)`;
    /// Chi² `(log x, x)`; Beta `(log x, log(1-x))`; Dirichlet `log x_k`;
    /// Wishart `(log|X|, vec X)`; InverseWishart `(log|X|, vec X⁻¹)`.
    pub fn sufficient_stats(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(match self.family {
            Family::Exponential => vec![x[0]],
            Family::Gamma | Family::ChiSquared => vec![x[0].ln(), x[0]],
            Family::InverseGamma => vec![x[0].ln(), 1.0 / x[0]],
            Family::Beta => vec![x[0].ln(), (-x[0]).ln_1p()],
            Family::Dirichlet => x.iter().map(|v| v.ln()).collect(),
            Family::Wishart | Family::InverseWishart => {
                let xm = matrix_point(x, self.dim)?;
                let mut out = vec![log_det_spd(&xm)?];
                let m = if self.family == Family::Wishart { xm } else { spd_inverse(&xm)? };
                out.extend(matrixops::vec_rm(&m).iter());
                out
            }
        })
    }

    /// `log h(x)`; every supported family has `h ≡ 1` on its support.
    pub fn log_base_measure(&self, _x: &[f64]) -> f64 {
        0.0
    }

    pub fn log_density(&self, x: &[f64]) -> Result<f64> {
        let phi = self.sufficient_stats(x)?;
        let dot: f64 = phi.iter().zip(&self.natural).map(|(a, b)| a * b).sum();
        Ok(self.log_base_measure(x) + dot - self.log_partition)
    }
}

pub fn canonical(params: &EFParams) -> Result<CanonicalEF> {
    params.validate()?;
    let family = params.family();
    let (natural, log_partition, dim) = match params {
        EFParams::Exponential { lambda } => (vec![-lambda], -lambda.ln(), 1),
        EFParams::Gamma { alpha, lambda } => (vec![alpha - 1.0, -lambda], ln_gamma(*alpha) - alpha * lambda.ln(), 1),
        EFParams::InverseGamma { alpha, lambda } => {
            (vec![-alpha - 1.0, -lambda], ln_gamma(*alpha) - alpha * lambda.ln(), 1)
        }
        EFParams::ChiSquared { k } => (vec![k / 2.0 - 1.0, -0.5], k / 2.0 * 2f64.ln() + ln_gamma(k / 2.0), 1),
        EFParams::Beta { alpha, beta } => (vec![alpha - 1.0, beta - 1.0], ln_beta(*alpha, *beta), 1),
        EFParams::Dirichlet { alpha } => {
            let a0: f64 = alpha.iter().sum();
            (
                alpha.iter().map(|a| a - 1.0).collect(),
                alpha.iter().map(|&a| ln_gamma(a)).sum::<f64>() - ln_gamma(a0),
                alpha.len(),
            )
        }
        EFParams::Wishart { n, v } => {
            let p = v.nrows();
            let pf = p as f64;
            let mut w = vec![(n - pf - 1.0) / 2.0];
            w.extend(matrixops::vec_rm(&spd_inverse(v)?).iter().map(|e| -0.5 * e));
            let lz = n * pf / 2.0 * 2f64.ln() + n / 2.0 * log_det_spd(v)? + ln_mvgamma(p, n / 2.0);
            (w, lz, p)
        }
        EFParams::InverseWishart { nu, psi } => {
            let p = psi.nrows();
            let pf = p as f64;
            let mut w = vec![-(nu + pf + 1.0) / 2.0];
            w.extend(matrixops::vec_rm(psi).iter().map(|e| -0.5 * e));
            let lz = nu * pf / 2.0 * 2f64.ln() + ln_mvgamma(p, nu / 2.0) - nu / 2.0 * log_det_spd(psi)?;
            (w, lz, p)
        }
    };
    Ok(CanonicalEF { family, natural, log_partition, dim })
}

/// Expected sufficient statistics `E[φ(x)]`, laid out as in
/// [`CanonicalEF::sufficient_stats`].
pub fn ef_mean(params: &EFParams) -> Result<Vec<f64>> {
    params.validate()?;
    Ok(match params {
        EFParams::Exponential { lambda } => vec![1.0 / lambda],
        EFParams::Gamma { alpha, lambda } => vec![digamma(*alpha) - lambda.ln(), alpha / lambda],
        EFParams::InverseGamma { alpha, lambda } => vec![lambda.ln() - digamma(*alpha), alpha / lambda],
        EFParams::ChiSquared { k } => vec![digamma(k / 2.0) + 2f64.ln(), *k],
        EFParams::Beta { alpha, beta } => {
            let s = digamma(alpha + beta);
            vec![digamma(*alpha) - s, digamma(*beta) - s]
        }
        EFParams::Dirichlet { alpha } => {
            let s = digamma(alpha.iter().sum());
            alpha.iter().map(|&a| digamma(a) - s).collect()
        }
        EFParams::Wishart { n, v } => {
            let p = v.nrows();
            let ld = (1..=p).map(|i| digamma((n - i as f64 + 1.0) / 2.0)).sum::<f64>()
                + p as f64 * 2f64.ln()
                + log_det_spd(v)?;
            let mut out = vec![ld];
            out.extend(matrixops::vec_rm(&(v * *n)).iter());
            out
        }
        EFParams::InverseWishart { nu, psi } => {
            let p = psi.nrows();
            let ld = -(1..=p).map(|i| digamma((nu - i as f64 + 1.0) / 2.0)).sum::<f64>() - p as f64 * 2f64.ln()
                + log_det_spd(psi)?;
            let mut out = vec![ld];
            out.extend(matrixops::vec_rm(&(spd_inverse(psi)? * *nu)).iter());
            out
        }
    })
}

/// Mean of the distribution itself (not of the sufficient statistics).
pub fn mean(params: &EFParams) -> Result<Vec<f64>> {
    params.validate()?;
    Ok(match params {
        EFParams::Exponential { lambda } => vec![1.0 / lambda],
        EFParams::Gamma { alpha, lambda } => vec![alpha / lambda],
        EFParams::InverseGamma { alpha, lambda } => {
            if *alpha <= 1.0 {
                return Err(Error::InvalidParams("inverse gamma mean needs alpha > 1".into()));
            }
            vec![lambda / (alpha - 1.0)]
        }
        EFParams::ChiSquared { k } => vec![*k],
        EFParams::Beta { alpha, beta } => vec![alpha / (alpha + beta)],
        EFParams::Dirichlet { alpha } => {
            let s: f64 = alpha.iter().sum();
            alpha.iter().map(|a| a / s).collect()
        }
        EFParams::Wishart { n, v } => matrixops::vec_rm(&(v * *n)).iter().copied().collect(),
        EFParams::InverseWishart { nu, psi } => {
            let p = psi.nrows() as f64;
            if *nu <= p + 1.0 {
                return Err(Error::InvalidParams("inverse Wishart mean needs nu > p+1".into()));
            }
            matrixops::vec_rm(&(psi / (nu - p - 1.0))).iter().copied().collect()
        }
    })
}

/// Prepared sampler; draws one flat point per call.
#[derive(Debug, Clone)]
pub struct Sampler {
    kind: SamplerKind,
}

#[derive(Debug, Clone)]
enum SamplerKind {
    Exponential(Exp<f64>),
    Gamma(GammaDist<f64>),
    InverseGamma(GammaDist<f64>),
    Beta(BetaDist<f64>),
    Dirichlet(Vec<GammaDist<f64>>),
    Wishart { n: f64, chol: DMatrix<f64>, invert: bool },
}

fn dist_err(e: impl std::fmt::Display) -> Error {
    Error::InvalidParams(e.to_string())
}

/// Bartlett factor `A` with `A Aᵀ ~ W(n, I)`.
fn bartlett<R: Rng + ?Sized>(n: f64, p: usize, rng: &mut R) -> DMatrix<f64> {
    let mut a = DMatrix::zeros(p, p);
    for i in 0..p {
        let dof = n - i as f64;
        let chi2 = GammaDist::new(dof / 2.0, 2.0).expect("dof > 0").sample(rng);
        a[(i, i)] = chi2.sqrt();
        for j in 0..i {
            a[(i, j)] = rng.sample::<f64, _>(StandardNormal);
        }
    }
    a
}

impl Sampler {
    pub fn new(params: &EFParams) -> Result<Self> {
        params.validate()?;
        let kind = match params {
            EFParams::Exponential { lambda } => SamplerKind::Exponential(Exp::new(*lambda).map_err(dist_err)?),
            EFParams::Gamma { alpha, lambda } => {
                SamplerKind::Gamma(GammaDist::new(*alpha, 1.0 / lambda).map_err(dist_err)?)
            }
            EFParams::InverseGamma { alpha, lambda } => {
                SamplerKind::InverseGamma(GammaDist::new(*alpha, 1.0 / lambda).map_err(dist_err)?)
            }
            EFParams::ChiSquared { k } => SamplerKind::Gamma(GammaDist::new(k / 2.0, 2.0).map_err(dist_err)?),
            EFParams::Beta { alpha, beta } => SamplerKind::Beta(BetaDist::new(*alpha, *beta).map_err(dist_err)?),
            EFParams::Dirichlet { alpha } => SamplerKind::Dirichlet(
                alpha.iter().map(|&a| GammaDist::new(a, 1.0).map_err(dist_err)).collect::<Result<_>>()?,
            ),
            EFParams::Wishart { n, v } => SamplerKind::Wishart {
                n: *n,
                chol: v.clone().cholesky().ok_or_else(|| dist_err("V not PD"))?.l(),
                invert: false,
            },
            EFParams::InverseWishart { nu, psi } => SamplerKind::Wishart {
                n: *nu,
                chol: spd_inverse(psi)?.cholesky().ok_or_else(|| dist_err("Psi not PD"))?.l(),
                invert: true,
            },
        };
        Ok(Sampler { kind })
    }

    pub fn point_dim(&self) -> usize {
        match &self.kind {
            SamplerKind::Dirichlet(g) => g.len(),
            SamplerKind::Wishart { chol, .. } => chol.nrows() * chol.nrows(),
            _ => 1,
        }
    }

    /// Writes one draw into `out` (length [`Sampler::point_dim`]).
    pub fn draw_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        match &self.kind {
            SamplerKind::Exponential(d) => out[0] = d.sample(rng),
            SamplerKind::Gamma(d) => out[0] = d.sample(rng),
            SamplerKind::InverseGamma(d) => out[0] = 1.0 / d.sample(rng),
            SamplerKind::Beta(d) => out[0] = d.sample(rng),
            SamplerKind::Dirichlet(gs) => {
                let mut s = 0.0;
                for (o, g) in out.iter_mut().zip(gs) {
                    *o = g.sample(rng);
                    s += *o;
                }
                out.iter_mut().for_each(|o| *o /= s);
            }
            SamplerKind::Wishart { n, chol, invert } => {
                let p = chol.nrows();
                let la = chol * bartlett(*n, p, rng);
                let mut x = symmetrize(&(&la * la.transpose()));
                if *invert {
                    x = spd_inverse(&x).unwrap_or_else(|_| {
                        x.clone().try_inverse().map(|m| symmetrize(&m)).expect("invertible Wishart draw")
                    });
                }
                for i in 0..p {
                    for j in 0..p {
                        out[i * p + j] = x[(i, j)];
                    }
                }
            }
        }
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let mut out = vec![0.0; self.point_dim()];
        self.draw_into(rng, &mut out);
        out
    }
}

pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Derived seed for sub-streams: a SplitMix64 step on `base ^ index`.
pub fn derive_seed(base: u64, index: u64) -> u64 {
    let mut z = base ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// `count` deterministic draws.
pub fn sample(params: &EFParams, seed: u64, count: usize) -> Result<Vec<Vec<f64>>> {
    if count == 0 {
        return Err(Error::InvalidParams("count must be at least 1".into()));
    }
    let sampler = Sampler::new(params)?;
    let mut rng = rng_from_seed(seed);
    Ok((0..count).map(|_| sampler.draw(&mut rng)).collect())
}

/// Observation batch for a conjugate update.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Observations {
    /// Binary labels, `true` for the positive class.
    Bernoulli { labels: Vec<bool> },
    /// Non-negative integer counts.
    Poisson { counts: Vec<u64> },
    /// Per-class counts.
    Categorical { counts: Vec<u64> },
    /// Scatter matrices `Σ xxᵀ`, each summarizing `count` zero-mean vectors.
    Scatter { matrices: Vec<ScatterObs> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScatterObs {
    #[serde(with = "matrix_rows")]
    pub scatter: DMatrix<f64>,
    pub count: f64,
}

impl Observations {
    fn name(&self) -> &'static str {
        match self {
            Observations::Bernoulli { .. } => "bernoulli",
            Observations::Poisson { .. } => "poisson",
            Observations::Categorical { .. } => "categorical",
            Observations::Scatter { .. } => "scatter",
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Observations::Bernoulli { labels } => labels.len(),
            Observations::Poisson { counts } => counts.len(),
            Observations::Categorical { counts } => counts.iter().sum::<u64>() as usize,
            Observations::Scatter { matrices } => matrices.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Adds the sufficient statistics of `obs` to the prior parameters.
pub fn conjugate_update(prior: &EFParams, obs: &Observations) -> Result<EFParams> {
    prior.validate()?;
    let mismatch = || Error::NonConjugatePair { prior: prior.family().to_string(), observations: obs.name().into() };
    let post = match (prior, obs) {
        (EFParams::Beta { alpha, beta }, Observations::Bernoulli { labels }) => {
            let pos = labels.iter().filter(|&&l| l).count() as f64;
            EFParams::Beta { alpha: alpha + pos, beta: beta + (labels.len() as f64 - pos) }
        }
        (EFParams::Gamma { alpha, lambda }, Observations::Poisson { counts }) => EFParams::Gamma {
            alpha: alpha + counts.iter().map(|&c| c as f64).sum::<f64>(),
            lambda: lambda + counts.len() as f64,
        },
        (EFParams::Dirichlet { alpha }, Observations::Categorical { counts }) => {
            if counts.len() != alpha.len() {
                return Err(Error::DimensionMismatch(format!(
                    "{} class counts for a Dirichlet with K = {}",
                    counts.len(),
                    alpha.len()
                )));
            }
            EFParams::Dirichlet { alpha: alpha.iter().zip(counts).map(|(a, &c)| a + c as f64).collect() }
        }
        (EFParams::InverseWishart { nu, psi }, Observations::Scatter { matrices }) => {
            let mut psi = psi.clone();
            let mut nu = *nu;
            for s in matrices {
                if s.scatter.shape() != psi.shape() {
                    return Err(Error::DimensionMismatch("scatter matrix size".into()));
                }
                if !is_symmetric(&s.scatter) || !(s.count >= 0.0) {
                    return Err(Error::InvalidParams("scatter must be symmetric with count >= 0".into()));
                }
                psi += symmetrize(&s.scatter);
                nu += s.count;
            }
            EFParams::InverseWishart { nu, psi }
        }
        _ => return Err(mismatch()),
    };
    post.validate()?;
    Ok(post)
}

/// Mode of the standard-basis density where it exists in the interior.
pub fn mode(params: &EFParams) -> Option<Vec<f64>> {
    match params {
        EFParams::Gamma { alpha, lambda } if *alpha > 1.0 => Some(vec![(alpha - 1.0) / lambda]),
        EFParams::InverseGamma { alpha, lambda } => Some(vec![lambda / (alpha + 1.0)]),
        EFParams::ChiSquared { k } if *k > 2.0 => Some(vec![k - 2.0]),
        EFParams::Beta { alpha, beta } if *alpha > 1.0 && *beta > 1.0 => {
            Some(vec![(alpha - 1.0) / (alpha + beta - 2.0)])
        }
        EFParams::Dirichlet { alpha } if alpha.iter().all(|&a| a > 1.0) => {
            let d = alpha.iter().sum::<f64>() - alpha.len() as f64;
            Some(alpha.iter().map(|a| (a - 1.0) / d).collect())
        }
        EFParams::Wishart { n, v } if *n > v.nrows() as f64 + 1.0 => {
            Some(matrixops::vec_rm(&(v * (n - v.nrows() as f64 - 1.0))).iter().copied().collect())
        }
        EFParams::InverseWishart { nu, psi } => {
            Some(matrixops::vec_rm(&(psi / (nu + psi.nrows() as f64 + 1.0))).iter().copied().collect())
        }
        _ => None,
    }
}

/// Dense vector helper used by callers that hold `&[f64]`.
pub fn to_dvector(x: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(x)
}
