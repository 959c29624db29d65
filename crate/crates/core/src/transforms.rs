//! Basis transformations `g`/`g⁻¹`, transformed densities and the numeric
//! Laplace oracle.
//!
//! Density coordinates: scalar bases use `y` itself; the Dirichlet uses the
//! first `K-1` entries (of the centered latent for the softmax basis, of the
//! simplex point for the identity basis); Wishart families use the
//! half-vectorized upper triangle of the symmetric matrix.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::bridges::{Covariance, GaussianApprox, LatentDomain};
use crate::distributions::{ln_beta, ln_mvgamma, EFParams, Family};
use crate::error::{Error, Result};
use crate::matrixops::{self, half_vec_dim, log_det_spd, spd_inverse, sym_eigen, unvech, vech};
use statrs::function::gamma::ln_gamma;

/// Basis tag without dimension metadata.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Basis {
    Identity,
    Log,
    Sqrt,
    Logit,
    SoftmaxInverse,
    #[serde(rename = "logm", alias = "matrix_log")]
    MatrixLog,
    #[serde(rename = "sqrtm", alias = "matrix_sqrt")]
    MatrixSqrt,
}

impl Basis {
    pub const ALL: [Basis; 7] = [
        Basis::Identity,
        Basis::Log,
        Basis::Sqrt,
        Basis::Logit,
        Basis::SoftmaxInverse,
        Basis::MatrixLog,
        Basis::MatrixSqrt,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Basis::Identity => "identity",
            Basis::Log => "log",
            Basis::Sqrt => "sqrt",
            Basis::Logit => "logit",
            Basis::SoftmaxInverse => "softmax_inverse",
            Basis::MatrixLog => "logm",
            Basis::MatrixSqrt => "sqrtm",
        }
    }

    pub fn parse(s: &str) -> Option<Basis> {
        let s = s.to_ascii_lowercase().replace('-', "_");
        Some(match s.as_str() {
            "identity" | "standard" | "id" => Basis::Identity,
            "log" => Basis::Log,
            "sqrt" => Basis::Sqrt,
            "logit" => Basis::Logit,
            "softmax_inverse" | "softmax" | "inverse_softmax" => Basis::SoftmaxInverse,
            "logm" | "matrix_log" => Basis::MatrixLog,
            "sqrtm" | "matrix_sqrt" => Basis::MatrixSqrt,
            _ => return None,
        })
    }

    /// Whether `(family, self)` is a supported pair.
    pub fn compatible(self, family: Family) -> bool {
        use Family::*;
        match self {
            Basis::Identity => true,
            Basis::Log | Basis::Sqrt => matches!(family, Exponential | Gamma | InverseGamma | ChiSquared),
            Basis::Logit => family == Beta,
            Basis::SoftmaxInverse => family == Dirichlet,
            Basis::MatrixLog | Basis::MatrixSqrt => matches!(family, Wishart | InverseWishart),
        }
    }

    /// Transformed bases available for a family.
    pub fn transformed_for(family: Family) -> Vec<Basis> {
        Basis::ALL.into_iter().filter(|b| *b != Basis::Identity && b.compatible(family)).collect()
    }
}

impl std::fmt::Display for Basis {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// A basis with its dimension metadata.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "basis", rename_all = "snake_case")]
pub enum BasisTransform {
    Identity,
    Log,
    Sqrt,
    Logit,
    SoftmaxInverse { k: usize },
    MatrixLog { p: usize },
    MatrixSqrt { p: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    /// `y = g(x)`.
    Forward,
    /// `x = g⁻¹(y)`.
    Inverse,
    /// `x = log y − mean(log y)` for the softmax basis.
    CenteredPseudoInverse,
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn logsumexp(x: &[f64]) -> f64 {
    let m = x.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    m + x.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// `log((e^a − e^b)/(a − b))`, with the limit `a` at `a = b`.
pub fn ln_exp_divided_difference(a: f64, b: f64) -> f64 {
    let d = (a - b).abs();
    let m = a.max(b);
    if d < 1e-8 {
        m - d / 2.0
    } else {
        m + (-(-d).exp_m1() / d).ln()
    }
}

pub fn softmax(x: &[f64]) -> Vec<f64> {
    let lse = logsumexp(x);
    x.iter().map(|v| (v - lse).exp()).collect()
}

pub fn centered_log(pi: &[f64]) -> Vec<f64> {
    let logs: Vec<f64> = pi.iter().map(|v| v.ln()).collect();
    let mean = logs.iter().sum::<f64>() / logs.len() as f64;
    logs.iter().map(|l| l - mean).collect()
}

impl BasisTransform {
    pub fn tag(&self) -> Basis {
        match self {
            BasisTransform::Identity => Basis::Identity,
            BasisTransform::Log => Basis::Log,
            BasisTransform::Sqrt => Basis::Sqrt,
            BasisTransform::Logit => Basis::Logit,
            BasisTransform::SoftmaxInverse { .. } => Basis::SoftmaxInverse,
            BasisTransform::MatrixLog { .. } => Basis::MatrixLog,
            BasisTransform::MatrixSqrt { .. } => Basis::MatrixSqrt,
        }
    }

    /// The transform for `basis` sized for `params`.
    pub fn for_params(basis: Basis, params: &EFParams) -> Result<Self> {
        let family = params.family();
        if !basis.compatible(family) {
            return Err(Error::IncompatibleBasis { family: family.to_string(), basis: basis.to_string() });
        }
        Ok(match basis {
            Basis::Identity => BasisTransform::Identity,
            Basis::Log => BasisTransform::Log,
            Basis::Sqrt => BasisTransform::Sqrt,
            Basis::Logit => BasisTransform::Logit,
            Basis::SoftmaxInverse => BasisTransform::SoftmaxInverse { k: params.dim() },
            Basis::MatrixLog => BasisTransform::MatrixLog { p: params.dim() },
            Basis::MatrixSqrt => BasisTransform::MatrixSqrt { p: params.dim() },
        })
    }

    /// `g(x)`.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        let scalar = |f: &dyn Fn(f64) -> Option<f64>| -> Result<Vec<f64>> {
            x.iter()
                .map(|&v| f(v).ok_or_else(|| Error::OutOfSupport(format!("{v} outside the forward domain"))))
                .collect()
        };
        match self {
            BasisTransform::Identity => Ok(x.to_vec()),
            BasisTransform::Log => scalar(&|v| (v > 0.0).then(|| v.ln())),
            BasisTransform::Sqrt => scalar(&|v| (v > 0.0).then(|| v.sqrt())),
            BasisTransform::Logit => scalar(&|v| (v > 0.0 && v < 1.0).then(|| (v / (1.0 - v)).ln())),
            BasisTransform::SoftmaxInverse { .. } => {
                Err(Error::DirectionUnavailable("softmax is not injective; use the centered pseudo-inverse".into()))
            }
            BasisTransform::MatrixLog { p } | BasisTransform::MatrixSqrt { p } => {
                let p = *p;
                if x.len() != p * p {
                    return Err(Error::DimensionMismatch(format!("expected {} entries", p * p)));
                }
                let m = matrixops::unvec_rm(x, p);
                let out = if matches!(self, BasisTransform::MatrixLog { .. }) {
                    matrixops::logm(&m)
                } else {
                    matrixops::sqrtm(&m)
                }
                .map_err(|e| Error::OutOfSupport(e.to_string()))?;
                Ok(matrixops::vec_rm(&out).iter().copied().collect())
            }
        }
    }

    /// `g⁻¹(y)`.
    pub fn inverse(&self, y: &[f64]) -> Result<Vec<f64>> {
        match self {
            BasisTransform::Identity => Ok(y.to_vec()),
            BasisTransform::Log => Ok(y.iter().map(|v| v.exp()).collect()),
            BasisTransform::Sqrt => {
                if y.iter().any(|&v| v <= 0.0) {
                    return Err(Error::OutOfSupport("sqrt basis uses the positive branch".into()));
                }
                Ok(y.iter().map(|v| v * v).collect())
            }
            BasisTransform::Logit => Ok(y.iter().map(|&v| 1.0 / (1.0 + (-v).exp())).collect()),
            BasisTransform::SoftmaxInverse { k } => {
                if y.len() != *k {
                    return Err(Error::DimensionMismatch(format!("expected {k} entries")));
                }
                Ok(softmax(y))
            }
            BasisTransform::MatrixLog { p } | BasisTransform::MatrixSqrt { p } => {
                let p = *p;
                if y.len() != p * p {
                    return Err(Error::DimensionMismatch(format!("expected {} entries", p * p)));
                }
                let m = matrixops::unvec_rm(y, p);
                if !matrixops::is_symmetric(&m) {
                    return Err(Error::OutOfSupport("latent matrix is not symmetric".into()));
                }
                let out = if matches!(self, BasisTransform::MatrixLog { .. }) {
                    matrixops::expm(&m)?
                } else {
                    let (vals, vecs) = sym_eigen(&m);
                    if vals.min() <= 0.0 {
                        return Err(Error::OutOfSupport("sqrtm basis uses the positive-definite branch".into()));
                    }
                    matrixops::from_eigen(&vals, &vecs, |v| v * v)
                };
                Ok(matrixops::vec_rm(&out).iter().copied().collect())
            }
        }
    }

    /// `log(y) − mean(log y)` for the softmax basis.
    pub fn centered_pseudo_inverse(&self, pi: &[f64]) -> Result<Vec<f64>> {
        match self {
            BasisTransform::SoftmaxInverse { k } => {
                if pi.len() != *k {
                    return Err(Error::DimensionMismatch(format!("expected {k} entries")));
                }
                if pi.iter().any(|&v| v <= 0.0) {
                    return Err(Error::OutOfSupport("simplex point with a non-positive entry".into()));
                }
                Ok(centered_log(pi))
            }
            _ => {
                Err(Error::DirectionUnavailable("the centered pseudo-inverse exists only for the softmax basis".into()))
            }
        }
    }

    pub fn apply(&self, x: &[f64], direction: Direction) -> Result<Vec<f64>> {
        match direction {
            Direction::Forward => self.forward(x),
            Direction::Inverse => self.inverse(x),
            Direction::CenteredPseudoInverse => self.centered_pseudo_inverse(x),
        }
    }

    /// `log|det ∂g⁻¹/∂z|` at density coordinates `z` (see module docs).
    pub fn log_abs_det_jacobian(&self, z: &[f64]) -> Result<f64> {
        match self {
            BasisTransform::Identity => Ok(0.0),
            BasisTransform::Log => Ok(z[0]),
            BasisTransform::Sqrt => {
                if z[0] <= 0.0 {
                    return Err(Error::OutOfSupport("sqrt basis needs y > 0".into()));
                }
                Ok((2.0 * z[0]).ln())
            }
            BasisTransform::Logit => Ok(-softplus(-z[0]) - softplus(z[0])),
            BasisTransform::SoftmaxInverse { k } => {
                let x = embed_centered(z, *k);
                let lse = logsumexp(&x);
                Ok((*k as f64).ln() + x.iter().map(|v| v - lse).sum::<f64>())
            }
            BasisTransform::MatrixLog { p } | BasisTransform::MatrixSqrt { p } => {
                let (vals, _) = sym_eigen(&unvech(z, *p));
                matrix_log_jacobian(self.tag(), vals.as_slice(), JacobianConvention::Exact)
                    .ok_or_else(|| Error::OutOfSupport("sqrtm basis needs a positive-definite latent".into()))
            }
        }
    }
}

fn matrix_log_jacobian(basis: Basis, vals: &[f64], conv: JacobianConvention) -> Option<f64> {
    let p = vals.len();
    let mut s = 0.0;
    match basis {
        Basis::MatrixLog => {
            for i in 0..p {
                s += vals[i];
                if conv == JacobianConvention::Exact {
                    for j in (i + 1)..p {
                        s += ln_exp_divided_difference(vals[i], vals[j]);
                    }
                }
            }
        }
        Basis::MatrixSqrt => {
            if vals.iter().any(|&v| v <= 0.0) {
                return None;
            }
            for i in 0..p {
                s += (2.0 * vals[i]).ln();
                if conv == JacobianConvention::Exact {
                    for j in (i + 1)..p {
                        s += (vals[i] + vals[j]).ln();
                    }
                }
            }
        }
        _ => {}
    }
    Some(s)
}

/// `[u, −Σu]`.
pub fn embed_centered(u: &[f64], k: usize) -> Vec<f64> {
    let mut x = u.to_vec();
    x.truncate(k - 1);
    x.push(-u.iter().take(k - 1).sum::<f64>());
    x
}

/// Applies `g`, `g⁻¹` or the centered pseudo-inverse to each point.
pub fn transform_samples(samples: &[Vec<f64>], basis: &BasisTransform, direction: Direction) -> Result<Vec<Vec<f64>>> {
    samples.iter().map(|s| basis.apply(s, direction)).collect()
}

/// How the change-of-variables factor is formed for matrix bases.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum JacobianConvention {
    /// Full Jacobian on the half-vectorized coordinates.
    #[default]
    Exact,
    /// Only `|det f'(Y)|` (eigenvalue-wise derivative), the form the
    /// closed-form matrix bridges are derived from. Identical to `Exact`
    /// for scalar and simplex bases.
    DeterminantOnly,
}

/// A callable log-density on some coordinate space.
pub trait LogDensity: Sync {
    fn dim(&self) -> usize;
    /// Log-density, `-∞` outside the domain.
    fn log_density(&self, z: &[f64]) -> f64;
    /// Distance from `z` to the domain boundary (∞ when unbounded).
    fn boundary_distance(&self, _z: &[f64]) -> f64 {
        f64::INFINITY
    }
}

/// Wraps a closure as a [`LogDensity`].
pub struct FnDensity<F: Fn(&[f64]) -> f64 + Sync> {
    pub dim: usize,
    pub f: F,
}

impl<F: Fn(&[f64]) -> f64 + Sync> LogDensity for FnDensity<F> {
    fn dim(&self) -> usize {
        self.dim
    }
    fn log_density(&self, z: &[f64]) -> f64 {
        (self.f)(z)
    }
}

#[derive(Debug, Clone)]
enum Kernel {
    Scalar,
    Simplex,
    Matrix { a: DMatrix<f64>, p: usize },
}

/// `p_y(y) = p_x(g⁻¹(y))·|det J_{g⁻¹}(y)|` on density coordinates.
#[derive(Debug, Clone)]
pub struct TransformedDensity {
    pub source: EFParams,
    pub basis: BasisTransform,
    pub convention: JacobianConvention,
    log_norm: f64,
    kernel: Kernel,
}

/// Builds the transformed density with the exact Jacobian.
pub fn push_forward(params: &EFParams, basis: &BasisTransform) -> Result<TransformedDensity> {
    push_forward_with(params, basis, JacobianConvention::Exact)
}

pub fn push_forward_with(
    params: &EFParams,
    basis: &BasisTransform,
    convention: JacobianConvention,
) -> Result<TransformedDensity> {
    params.validate()?;
    let expected = BasisTransform::for_params(basis.tag(), params)?;
    if expected != *basis {
        return Err(Error::IncompatibleBasis { family: params.family().to_string(), basis: format!("{basis:?}") });
    }
    let (log_norm, kernel) = match params {
        EFParams::Exponential { lambda } => (lambda.ln(), Kernel::Scalar),
        EFParams::Gamma { alpha, lambda } => (alpha * lambda.ln() - ln_gamma(*alpha), Kernel::Scalar),
        EFParams::InverseGamma { alpha, lambda } => (alpha * lambda.ln() - ln_gamma(*alpha), Kernel::Scalar),
        EFParams::ChiSquared { k } => (-(k / 2.0) * 2f64.ln() - ln_gamma(k / 2.0), Kernel::Scalar),
        EFParams::Beta { alpha, beta } => (-ln_beta(*alpha, *beta), Kernel::Scalar),
        EFParams::Dirichlet { alpha } => {
            let a0: f64 = alpha.iter().sum();
            (ln_gamma(a0) - alpha.iter().map(|&a| ln_gamma(a)).sum::<f64>(), Kernel::Simplex)
        }
        EFParams::Wishart { n, v } => {
            let p = v.nrows();
            let pf = p as f64;
            let ln = -(n * pf / 2.0) * 2f64.ln() - n / 2.0 * log_det_spd(v)? - ln_mvgamma(p, n / 2.0);
            (ln, Kernel::Matrix { a: spd_inverse(v)?, p })
        }
        EFParams::InverseWishart { nu, psi } => {
            let p = psi.nrows();
            let pf = p as f64;
            let ln = nu / 2.0 * log_det_spd(psi)? - nu * pf / 2.0 * 2f64.ln() - ln_mvgamma(p, nu / 2.0);
            (ln, Kernel::Matrix { a: psi.clone(), p })
        }
    };
    Ok(TransformedDensity { source: params.clone(), basis: *basis, convention, log_norm, kernel })
}

impl TransformedDensity {
    /// Scalar family kernel from `x`, `log x` and `log(1−x)`.
    fn scalar_kernel(&self, x: f64, lx: f64, l1mx: f64) -> f64 {
        match &self.source {
            EFParams::Exponential { lambda } => -lambda * x,
            EFParams::Gamma { alpha, lambda } => (alpha - 1.0) * lx - lambda * x,
            EFParams::InverseGamma { alpha, lambda } => -(alpha + 1.0) * lx - lambda / x,
            EFParams::ChiSquared { k } => (k / 2.0 - 1.0) * lx - x / 2.0,
            EFParams::Beta { alpha, beta } => (alpha - 1.0) * lx + (beta - 1.0) * l1mx,
            _ => f64::NAN,
        }
    }

    fn scalar_log_density(&self, y: f64) -> f64 {
        let is_beta = self.source.family() == Family::Beta;
        let (x, lx, l1mx, lj) = match self.basis {
            BasisTransform::Identity => {
                if y <= 0.0 || (is_beta && y >= 1.0) || !y.is_finite() {
                    return f64::NEG_INFINITY;
                }
                (y, y.ln(), if is_beta { (-y).ln_1p() } else { 0.0 }, 0.0)
            }
            BasisTransform::Log => (y.exp(), y, 0.0, y),
            BasisTransform::Sqrt => {
                if y <= 0.0 || !y.is_finite() {
                    return f64::NEG_INFINITY;
                }
                let ly = y.ln();
                (y * y, 2.0 * ly, 0.0, 2f64.ln() + ly)
            }
            BasisTransform::Logit => {
                let lx = -softplus(-y);
                let l1mx = -softplus(y);
                (lx.exp(), lx, l1mx, lx + l1mx)
            }
            _ => return f64::NAN,
        };
        if !x.is_finite() || (x <= 0.0 && self.source.family() != Family::Exponential) {
            return f64::NEG_INFINITY;
        }
        let v = self.log_norm + self.scalar_kernel(x, lx, l1mx) + lj;
        if v.is_nan() {
            f64::NEG_INFINITY
        } else {
            v
        }
    }

    fn simplex_log_density(&self, u: &[f64]) -> f64 {
        let alpha = match &self.source {
            EFParams::Dirichlet { alpha } => alpha,
            _ => return f64::NAN,
        };
        let k = alpha.len();
        match self.basis {
            BasisTransform::SoftmaxInverse { .. } => {
                let x = embed_centered(u, k);
                let lse = logsumexp(&x);
                let s: f64 = alpha.iter().zip(&x).map(|(a, xi)| a * (xi - lse)).sum();
                self.log_norm + (k as f64).ln() + s
            }
            _ => {
                let last = 1.0 - u.iter().sum::<f64>();
                if u.iter().any(|&v| v <= 0.0) || last <= 0.0 {
                    return f64::NEG_INFINITY;
                }
                let s: f64 =
                    alpha.iter().zip(u.iter().chain(std::iter::once(&last))).map(|(a, v)| (a - 1.0) * v.ln()).sum();
                self.log_norm + s
            }
        }
    }

    fn matrix_log_density(&self, z: &[f64], a: &DMatrix<f64>, p: usize) -> f64 {
        let (vals, vecs) = sym_eigen(&unvech(z, p));
        // X = U f(Λ) Uᵀ
        let (fvals, lj): (Vec<f64>, f64) = match self.basis {
            BasisTransform::Identity => {
                if vals.min() <= 0.0 {
                    return f64::NEG_INFINITY;
                }
                (vals.iter().copied().collect(), 0.0)
            }
            BasisTransform::MatrixLog { .. } => (
                vals.iter().map(|v| v.exp()).collect(),
                matrix_log_jacobian(Basis::MatrixLog, vals.as_slice(), self.convention).unwrap_or(f64::NAN),
            ),
            BasisTransform::MatrixSqrt { .. } => {
                match matrix_log_jacobian(Basis::MatrixSqrt, vals.as_slice(), self.convention) {
                    Some(lj) => (vals.iter().map(|v| v * v).collect(), lj),
                    None => return f64::NEG_INFINITY,
                }
            }
            _ => return f64::NAN,
        };
        if fvals.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
            return f64::NEG_INFINITY;
        }
        let logdet: f64 = match self.basis {
            BasisTransform::MatrixLog { .. } => vals.iter().sum(),
            _ => fvals.iter().map(|v| v.ln()).sum(),
        };
        let pf = p as f64;
        // uᵢᵀ A uᵢ
        let quad: Vec<f64> = (0..p)
            .map(|i| {
                let u = vecs.column(i);
                (u.transpose() * a * u)[(0, 0)]
            })
            .collect();
        let v = match &self.source {
            EFParams::Wishart { n, .. } => {
                let tr: f64 = fvals.iter().zip(&quad).map(|(f, q)| f * q).sum();
                (n - pf - 1.0) / 2.0 * logdet - tr / 2.0
            }
            EFParams::InverseWishart { nu, .. } => {
                let tr: f64 = fvals.iter().zip(&quad).map(|(f, q)| q / f).sum();
                -(nu + pf + 1.0) / 2.0 * logdet - tr / 2.0
            }
            _ => f64::NAN,
        };
        let out = self.log_norm + v + lj;
        if out.is_nan() {
            f64::NEG_INFINITY
        } else {
            out
        }
    }

    /// Maps a data-domain point to density coordinates.
    pub fn coords_from_sample(&self, x: &[f64]) -> Result<Vec<f64>> {
        match (&self.kernel, self.basis) {
            (Kernel::Scalar, b) => b.forward(x),
            (Kernel::Simplex, BasisTransform::SoftmaxInverse { k }) => {
                let mut c = self.basis.centered_pseudo_inverse(x)?;
                c.truncate(k - 1);
                Ok(c)
            }
            (Kernel::Simplex, _) => Ok(x[..x.len() - 1].to_vec()),
            (Kernel::Matrix { p, .. }, b) => {
                let y = b.forward(x)?;
                Ok(vech(&matrixops::unvec_rm(&y, *p)).iter().copied().collect())
            }
        }
    }

    /// A starting point for mode search derived from the source mean
    /// (or a scale-based stand-in when the mean does not exist).
    pub fn default_init(&self) -> Vec<f64> {
        let shift = |v: f64| v * 1.1 + 0.1;
        match (&self.source, self.basis) {
            (EFParams::Dirichlet { alpha }, _) => {
                let k = alpha.len();
                match self.basis {
                    BasisTransform::SoftmaxInverse { .. } => vec![0.0; k - 1],
                    _ => vec![1.0 / k as f64; k - 1],
                }
            }
            (EFParams::Wishart { n, v }, b) => {
                let x = v * *n;
                self.matrix_init(&x, b)
            }
            (EFParams::InverseWishart { nu, psi }, b) => {
                let x = psi / *nu;
                self.matrix_init(&x, b)
            }
            (params, b) => {
                let m = match params {
                    EFParams::Exponential { lambda } => 1.0 / lambda,
                    EFParams::Gamma { alpha, lambda } => alpha / lambda,
                    EFParams::InverseGamma { alpha, lambda } => lambda / alpha,
                    EFParams::ChiSquared { k } => *k,
                    EFParams::Beta { alpha, beta } => alpha / (alpha + beta),
                    _ => 1.0,
                };
                let y = b.forward(&[m]).map(|v| v[0]).unwrap_or(m);
                match b {
                    BasisTransform::Identity => {
                        vec![if params.family() == Family::Beta { 0.5 * y + 0.25 } else { shift(y) }]
                    }
                    _ => vec![shift(y)],
                }
            }
        }
    }

    fn matrix_init(&self, x: &DMatrix<f64>, b: BasisTransform) -> Vec<f64> {
        let y = match b {
            BasisTransform::MatrixLog { .. } => matrixops::logm(x).unwrap_or_else(|_| x.clone()),
            BasisTransform::MatrixSqrt { .. } => matrixops::sqrtm(x).unwrap_or_else(|_| x.clone()),
            _ => x.clone(),
        };
        vech(&y).iter().copied().collect()
    }

    /// Expands density-coordinate `(mode, cov)` into a [`GaussianApprox`].
    pub fn embed(&self, mode: &DVector<f64>, cov: &DMatrix<f64>) -> GaussianApprox {
        match (&self.kernel, self.basis) {
            (Kernel::Scalar, _) => GaussianApprox::scalar(mode[0], cov[(0, 0)]),
            (Kernel::Simplex, b) => {
                let k = mode.len() + 1;
                let a = DMatrix::from_fn(k, k - 1, |i, j| {
                    if i == k - 1 {
                        -1.0
                    } else if i == j {
                        1.0
                    } else {
                        0.0
                    }
                });
                let mut mean: Vec<f64> = mode.iter().copied().collect();
                let last =
                    if matches!(b, BasisTransform::SoftmaxInverse { .. }) { -mode.sum() } else { 1.0 - mode.sum() };
                mean.push(last);
                let domain = if matches!(b, BasisTransform::SoftmaxInverse { .. }) {
                    LatentDomain::SimplexLatent { k }
                } else {
                    LatentDomain::Simplex { k }
                };
                GaussianApprox {
                    mean: DVector::from_vec(mean),
                    cov: Covariance::Dense(matrixops::symmetrize(&(&a * cov * a.transpose()))),
                    domain,
                }
            }
            (Kernel::Matrix { p, .. }, _) => GaussianApprox {
                mean: mode.clone(),
                cov: Covariance::Dense(cov.clone()),
                domain: LatentDomain::SymmetricHalfVec { p: *p },
            },
        }
    }
}

impl LogDensity for TransformedDensity {
    fn dim(&self) -> usize {
        match &self.kernel {
            Kernel::Scalar => 1,
            Kernel::Simplex => self.source.dim() - 1,
            Kernel::Matrix { p, .. } => half_vec_dim(*p),
        }
    }

    fn log_density(&self, z: &[f64]) -> f64 {
        if z.iter().any(|v| !v.is_finite()) {
            return f64::NEG_INFINITY;
        }
        match &self.kernel {
            Kernel::Scalar => self.scalar_log_density(z[0]),
            Kernel::Simplex => self.simplex_log_density(z),
            Kernel::Matrix { a, p } => self.matrix_log_density(z, a, *p),
        }
    }

    fn boundary_distance(&self, z: &[f64]) -> f64 {
        match (&self.kernel, self.basis) {
            (Kernel::Scalar, BasisTransform::Identity) => {
                if self.source.family() == Family::Beta {
                    z[0].min(1.0 - z[0])
                } else {
                    z[0]
                }
            }
            (Kernel::Scalar, BasisTransform::Sqrt) => z[0],
            (Kernel::Simplex, BasisTransform::Identity) => {
                let last = 1.0 - z.iter().sum::<f64>();
                z.iter().fold(last, |m, &v| m.min(v))
            }
            (Kernel::Matrix { p, .. }, BasisTransform::Identity | BasisTransform::MatrixSqrt { .. }) => {
                sym_eigen(&unvech(z, *p)).0.min()
            }
            _ => f64::INFINITY,
        }
    }
}

/// Result of the numeric mode/Hessian search.
#[derive(Debug, Clone)]
pub struct NumericLaplace {
    pub mode: DVector<f64>,
    pub covariance: DMatrix<f64>,
    pub hessian: DMatrix<f64>,
    pub iterations: usize,
    pub gradient_norm: f64,
}

pub const DEFAULT_TOLERANCE: f64 = 1e-10;
const MAX_ITER: usize = 500;

struct Fd<'a> {
    f: &'a dyn LogDensity,
}

impl Fd<'_> {
    fn eval(&self, x: &DVector<f64>) -> f64 {
        self.f.log_density(x.as_slice())
    }

    /// Fourth-order central difference gradient with per-coordinate steps.
    fn gradient(&self, x: &DVector<f64>, steps: &[f64]) -> Option<DVector<f64>> {
        let n = x.len();
        let mut g = DVector::zeros(n);
        for i in 0..n {
            let mut h = steps[i];
            let mut ok = false;
            for _ in 0..8 {
                let at = |t: f64| {
                    let mut y = x.clone();
                    y[i] += t * h;
                    self.eval(&y)
                };
                let (m2, m1, p1, p2) = (at(-2.0), at(-1.0), at(1.0), at(2.0));
                if [m2, m1, p1, p2].iter().all(|v| v.is_finite()) {
                    g[i] = (m2 - 8.0 * m1 + 8.0 * p1 - p2) / (12.0 * h);
                    ok = true;
                    break;
                }
                h /= 4.0;
            }
            if !ok {
                return None;
            }
        }
        Some(g)
    }

    /// Fourth-order central differences of the gradient, symmetrized.
    fn hessian(&self, x: &DVector<f64>, steps: &[f64]) -> Option<DMatrix<f64>> {
        let n = x.len();
        let mut hm = DMatrix::zeros(n, n);
        for j in 0..n {
            let mut h = steps[j];
            let mut done = false;
            for _ in 0..8 {
                let at = |t: f64| {
                    let mut y = x.clone();
                    y[j] += t * h;
                    self.gradient(&y, steps)
                };
                if let (Some(m2), Some(m1), Some(p1), Some(p2)) = (at(-2.0), at(-1.0), at(1.0), at(2.0)) {
                    let col = (m2 - m1 * 8.0 + p1 * 8.0 - p2) / (12.0 * h);
                    hm.set_column(j, &col);
                    done = true;
                    break;
                }
                h /= 4.0;
            }
            if !done {
                return None;
            }
        }
        Some(matrixops::symmetrize(&hm))
    }
}

/// `Some(-H)` factor when `-H` is positive definite beyond noise level.
fn negdef_check(h: &DMatrix<f64>, fval: f64) -> bool {
    let neg = -h;
    let (vals, _) = sym_eigen(&neg);
    vals.min() > 1e-8 * (1.0 + fval.abs()) && neg.cholesky().is_some()
}

fn base_steps(x: &DVector<f64>) -> Vec<f64> {
    x.iter().map(|v| 1e-3 * (1.0 + v.abs())).collect()
}

/// Marginal standard deviations implied by a negative definite Hessian.
fn curvature_scale(h: &DMatrix<f64>) -> Option<Vec<f64>> {
    let cov = spd_inverse(&(-h)).ok()?;
    Some((0..cov.nrows()).map(|i| cov[(i, i)].sqrt()).collect())
}

fn scaled_steps(x: &DVector<f64>, sd: Option<&[f64]>) -> Vec<f64> {
    let base = base_steps(x);
    match sd {
        Some(sd) => base.iter().zip(sd).map(|(b, s)| b.min(2e-3 * s)).collect(),
        None => base,
    }
}

/// Numeric Laplace approximation on raw coordinates.
///
/// Damped Newton with backtracking, falling back to gradient ascent when
/// the Hessian is not negative definite. The final Hessian uses steps
/// scaled to the curvature found at the mode.
pub fn numeric_laplace_raw(density: &dyn LogDensity, init: &[f64], tolerance: f64) -> Result<NumericLaplace> {
    let n = density.dim();
    if init.len() != n {
        return Err(Error::DimensionMismatch(format!("init has {} entries, density has {n}", init.len())));
    }
    let fd = Fd { f: density };
    let mut x = DVector::from_column_slice(init);
    let mut fx = fd.eval(&x);
    if !fx.is_finite() {
        return Err(Error::OutOfSupport("initial point outside the transformed domain".into()));
    }
    let fail_fd = || Error::NoValidLaplace("finite differences left the domain".into());
    let mut gnorm = f64::INFINITY;
    let mut last_h: Option<DMatrix<f64>> = None;
    let mut scale: Option<Vec<f64>> = None;
    for it in 0..MAX_ITER {
        let steps = scaled_steps(&x, scale.as_deref());
        let g = fd.gradient(&x, &steps).ok_or_else(fail_fd)?;
        gnorm = g.norm();
        let h = fd.hessian(&x, &steps).ok_or_else(fail_fd)?;
        let nd = negdef_check(&h, fx);
        scale = if nd { curvature_scale(&h) } else { None };
        if gnorm <= tolerance && nd {
            return finish(&fd, density, x, it, gnorm);
        }
        let dir = if nd {
            (-&h).cholesky().map(|c| c.solve(&g)).unwrap_or_else(|| g.clone())
        } else {
            g.clone() / gnorm.max(1e-300) * (1.0 + x.norm()) * 0.1
        };
        let mut t = 1.0;
        let mut moved = false;
        for _ in 0..60 {
            let cand = &x + &dir * t;
            let fc = fd.eval(&cand);
            if fc.is_finite() && fc >= fx - 1e-14 * (1.0 + fx.abs()) && (fc > fx || nd) {
                let step = (&cand - &x).norm();
                x = cand;
                fx = fc;
                moved = step > 0.0;
                if nd && step <= 1e-14 * (1.0 + x.norm()) {
                    return finish(&fd, density, x, it, gnorm);
                }
                break;
            }
            t *= 0.5;
        }
        last_h = Some(h);
        if !moved {
            if nd {
                return finish(&fd, density, x, it, gnorm);
            }
            return Err(Error::NoValidLaplace("ascent stalled where the Hessian is not negative definite".into()));
        }
    }
    match last_h {
        Some(h) if !negdef_check(&h, fx) => {
            Err(Error::NoValidLaplace("no interior mode: Hessian not negative definite".into()))
        }
        _ => Err(Error::NonConvergence { iterations: MAX_ITER, gradient_norm: gnorm }),
    }
}

fn finish(fd: &Fd<'_>, density: &dyn LogDensity, x: DVector<f64>, it: usize, gnorm: f64) -> Result<NumericLaplace> {
    let steps = base_steps(&x);
    let h0 = fd.hessian(&x, &steps).ok_or_else(|| Error::NoValidLaplace("Hessian stencil left the domain".into()))?;
    let fx = fd.eval(&x);
    if !negdef_check(&h0, fx) {
        return Err(Error::NoValidLaplace("Hessian at the stationary point is not negative definite".into()));
    }
    let sd = curvature_scale(&h0).ok_or_else(|| Error::NotPositiveDefinite("negated Hessian".into()))?;
    if density.boundary_distance(x.as_slice()) < 1e-6 * sd.iter().fold(f64::INFINITY, |m, &s| m.min(s)) {
        return Err(Error::NoValidLaplace("mode lies on the domain boundary".into()));
    }
    let steps = scaled_steps(&x, Some(&sd));
    let h = fd.hessian(&x, &steps).filter(|h| negdef_check(h, fx)).unwrap_or(h0);
    let covariance = spd_inverse(&(-&h))?;
    Ok(NumericLaplace { mode: x, covariance, hessian: h, iterations: it, gradient_norm: gnorm })
}

/// Numeric Laplace approximation of a transformed density, embedded in
/// the same representation the closed-form bridges use.
pub fn numeric_laplace(density: &TransformedDensity, init: &[f64], tolerance: f64) -> Result<GaussianApprox> {
    let r = numeric_laplace_raw(density, init, tolerance)?;
    Ok(density.embed(&r.mode, &r.covariance))
}
