//! Closed-form Laplace Matching bridges `θ ↔ (μ, Σ)`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::distributions::{EFParams, Family};
use crate::error::{Error, Result};
use crate::matrixops::{
    self, duplication, expm, half_vec_dim, half_vec_precision, kron, logm, spd_inverse, sqrtm, sym_eigen, symmetrize,
    unvec_rm, vec_rm, vech,
};
use crate::transforms::Basis;

/// Structure-tagged covariance.
#[derive(Debug, Clone, PartialEq)]
pub enum Covariance {
    Scalar(f64),
    Diagonal(DVector<f64>),
    Dense(DMatrix<f64>),
    /// `c · I_n`.
    ScaledIdentity {
        c: f64,
        n: usize,
    },
}

impl Covariance {
    pub fn dim(&self) -> usize {
        match self {
            Covariance::Scalar(_) => 1,
            Covariance::Diagonal(d) => d.len(),
            Covariance::Dense(m) => m.nrows(),
            Covariance::ScaledIdentity { n, .. } => *n,
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        match self {
            Covariance::Scalar(v) => DMatrix::from_element(1, 1, *v),
            Covariance::Diagonal(d) => DMatrix::from_diagonal(d),
            Covariance::Dense(m) => m.clone(),
            Covariance::ScaledIdentity { c, n } => DMatrix::identity(*n, *n) * *c,
        }
    }

    pub fn diagonal(&self) -> DVector<f64> {
        match self {
            Covariance::Scalar(v) => DVector::from_element(1, *v),
            Covariance::Diagonal(d) => d.clone(),
            Covariance::Dense(m) => m.diagonal(),
            Covariance::ScaledIdentity { c, n } => DVector::from_element(*n, *c),
        }
    }
}

/// Where the Gaussian lives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LatentDomain {
    Scalar,
    /// Points of the simplex itself (identity basis); `Σ·1 = 0`.
    Simplex {
        k: usize,
    },
    /// Centered softmax latent; `Σ·1 = 0`.
    SimplexLatent {
        k: usize,
    },
    /// Row-major `p²` vectorization of a symmetric matrix.
    SymmetricMatrix {
        p: usize,
    },
    /// Upper-triangle `p(p+1)/2` coordinates.
    SymmetricHalfVec {
        p: usize,
    },
    Euclidean {
        d: usize,
    },
}

impl LatentDomain {
    pub fn dim(&self) -> usize {
        match *self {
            LatentDomain::Scalar => 1,
            LatentDomain::Simplex { k } | LatentDomain::SimplexLatent { k } => k,
            LatentDomain::SymmetricMatrix { p } => p * p,
            LatentDomain::SymmetricHalfVec { p } => half_vec_dim(p),
            LatentDomain::Euclidean { d } => d,
        }
    }
}

/// `N(μ, Σ)` with a domain tag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GaussianRepr", into = "GaussianRepr")]
pub struct GaussianApprox {
    pub mean: DVector<f64>,
    pub cov: Covariance,
    pub domain: LatentDomain,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum CovRepr {
    Scalar { variance: f64 },
    Diagonal { values: Vec<f64> },
    Dense { rows: Vec<Vec<f64>> },
    ScaledIdentity { c: f64, n: usize },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct GaussianRepr {
    mean: Vec<f64>,
    covariance: CovRepr,
    domain: LatentDomain,
}

impl From<GaussianApprox> for GaussianRepr {
    fn from(g: GaussianApprox) -> Self {
        let covariance = match g.cov {
            Covariance::Scalar(v) => CovRepr::Scalar { variance: v },
            Covariance::Diagonal(d) => CovRepr::Diagonal { values: d.iter().copied().collect() },
            Covariance::Dense(m) => {
                CovRepr::Dense { rows: (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect() }
            }
            Covariance::ScaledIdentity { c, n } => CovRepr::ScaledIdentity { c, n },
        };
        GaussianRepr { mean: g.mean.iter().copied().collect(), covariance, domain: g.domain }
    }
}

impl TryFrom<GaussianRepr> for GaussianApprox {
    type Error = Error;
    fn try_from(r: GaussianRepr) -> Result<Self> {
        let cov = match r.covariance {
            CovRepr::Scalar { variance } => Covariance::Scalar(variance),
            CovRepr::Diagonal { values } => Covariance::Diagonal(DVector::from_vec(values)),
            CovRepr::Dense { rows } => {
                let n = rows.len();
                if rows.iter().any(|row| row.len() != n) {
                    return Err(Error::DimensionMismatch("dense covariance must be square".into()));
                }
                Covariance::Dense(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
            }
            CovRepr::ScaledIdentity { c, n } => Covariance::ScaledIdentity { c, n },
        };
        let g = GaussianApprox { mean: DVector::from_vec(r.mean), cov, domain: r.domain };
        g.validate()?;
        Ok(g)
    }
}

impl GaussianApprox {
    pub fn scalar(mean: f64, variance: f64) -> Self {
        GaussianApprox {
            mean: DVector::from_element(1, mean),
            cov: Covariance::Scalar(variance),
            domain: LatentDomain::Scalar,
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn cov_dense(&self) -> DMatrix<f64> {
        self.cov.to_dense()
    }

    /// Checks dimensions and (semi-)definiteness.
    pub fn validate(&self) -> Result<()> {
        let n = self.mean.len();
        if self.cov.dim() != n || self.domain.dim() != n {
            return Err(Error::DimensionMismatch(format!(
                "mean has {n} entries, covariance {} and domain {}",
                self.cov.dim(),
                self.domain.dim()
            )));
        }
        if self.mean.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParams("non-finite mean".into()));
        }
        let ok = match &self.cov {
            Covariance::Scalar(v) => *v > 0.0 && v.is_finite(),
            Covariance::Diagonal(d) => d.iter().all(|v| *v > 0.0 && v.is_finite()),
            Covariance::ScaledIdentity { c, .. } => *c > 0.0 && c.is_finite(),
            Covariance::Dense(m) => match self.domain {
                LatentDomain::Simplex { .. } | LatentDomain::SimplexLatent { .. } => {
                    let (vals, _) = sym_eigen(m);
                    matrixops::is_symmetric(m) && vals[1] > matrixops::PD_TOL * vals.max().abs()
                }
                _ => matrixops::is_positive_definite(m),
            },
        };
        if ok {
            Ok(())
        } else {
            Err(Error::NotPositiveDefinite("covariance is not positive definite".into()))
        }
    }

    /// Diagonal-only view of the covariance.
    pub fn diagonal_view(&self) -> GaussianApprox {
        GaussianApprox { mean: self.mean.clone(), cov: Covariance::Diagonal(self.cov.diagonal()), domain: self.domain }
    }

    /// Re-expresses a symmetric-matrix Gaussian on half-vectorized
    /// coordinates: mean `vech(M)`, precision `Dᵀ Σ⁻¹ D`.
    pub fn to_half_vec(&self) -> Result<GaussianApprox> {
        match self.domain {
            LatentDomain::SymmetricHalfVec { .. } => Ok(self.clone()),
            LatentDomain::SymmetricMatrix { p } => {
                let mean = vech(&unvec_rm(self.mean.as_slice(), p));
                let cov = match &self.cov {
                    Covariance::ScaledIdentity { c, .. } => {
                        let d = duplication(p);
                        spd_inverse(&((d.transpose() * d) / *c))?
                    }
                    other => spd_inverse(&half_vec_precision(&other.to_dense())?)?,
                };
                Ok(GaussianApprox {
                    mean,
                    cov: Covariance::Dense(symmetrize(&cov)),
                    domain: LatentDomain::SymmetricHalfVec { p },
                })
            }
            _ => Err(Error::DomainMismatch("half-vectorization needs a symmetric-matrix Gaussian".into())),
        }
    }

    /// Mean and covariance on the coordinates a transformed density is
    /// evaluated in (scalar, first `K-1` simplex entries, half-vec).
    pub fn density_coordinates(&self) -> Result<(DVector<f64>, DMatrix<f64>)> {
        match self.domain {
            LatentDomain::Simplex { k } | LatentDomain::SimplexLatent { k } => {
                let c = self.cov_dense();
                Ok((self.mean.rows(0, k - 1).into_owned(), c.view((0, 0), (k - 1, k - 1)).into_owned()))
            }
            LatentDomain::SymmetricMatrix { .. } => {
                let h = self.to_half_vec()?;
                Ok((h.mean, h.cov.to_dense()))
            }
            _ => Ok((self.mean.clone(), self.cov_dense())),
        }
    }

    /// Log-density evaluator on density coordinates.
    pub fn evaluator(&self) -> Result<GaussianEvaluator> {
        let (m, c) = self.density_coordinates()?;
        GaussianEvaluator::new(m, &c)
    }
}

/// Cholesky-backed Gaussian log-density and sampler.
#[derive(Debug, Clone)]
pub struct GaussianEvaluator {
    pub mean: DVector<f64>,
    chol: DMatrix<f64>,
    log_norm: f64,
}

impl GaussianEvaluator {
    pub fn new(mean: DVector<f64>, cov: &DMatrix<f64>) -> Result<Self> {
        let l = symmetrize(cov)
            .cholesky()
            .ok_or_else(|| Error::NotPositiveDefinite("covariance has no Cholesky factor".into()))?
            .l();
        let n = mean.len() as f64;
        let logdet: f64 = 2.0 * l.diagonal().iter().map(|v| v.ln()).sum::<f64>();
        Ok(GaussianEvaluator { mean, chol: l, log_norm: -0.5 * n * (2.0 * std::f64::consts::PI).ln() - 0.5 * logdet })
    }

    pub fn log_pdf(&self, z: &[f64]) -> f64 {
        let d = DVector::from_column_slice(z) - &self.mean;
        match self.chol.solve_lower_triangular(&d) {
            Some(w) => self.log_norm - 0.5 * w.norm_squared(),
            None => f64::NEG_INFINITY,
        }
    }

    pub fn sample<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let z = DVector::from_fn(self.mean.len(), |_, _| rng.sample::<f64, _>(rand_distr::StandardNormal));
        &self.mean + &self.chol * z
    }
}

/// A `(family, basis)` pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BridgeSpec {
    pub family: Family,
    pub basis: Basis,
}

impl BridgeSpec {
    pub fn new(family: Family, basis: Basis) -> Result<Self> {
        if basis == Basis::Identity || !basis.compatible(family) {
            return Err(Error::IncompatibleBasis { family: family.to_string(), basis: basis.to_string() });
        }
        Ok(BridgeSpec { family, basis })
    }

    /// Every transformed-basis pair.
    pub fn all() -> Vec<BridgeSpec> {
        Family::ALL
            .iter()
            .flat_map(|&f| Basis::transformed_for(f).into_iter().map(move |b| BridgeSpec { family: f, basis: b }))
            .collect()
    }
}

/// Options for [`lm_inverse_with`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct InverseOptions {
    /// Invert matrix-sqrt bridges by assuming the covariance has the
    /// Kronecker structure produced by the forward map.
    pub structured_sqrtm: bool,
}

fn outside(msg: impl Into<String>) -> Error {
    Error::OutsideValidityRegion(msg.into())
}

/// Checks the validity region of the transformed-basis bridge.
pub fn check_validity(params: &EFParams, basis: Basis) -> Result<()> {
    params.validate()?;
    let family = params.family();
    if !basis.compatible(family) {
        return Err(Error::IncompatibleBasis { family: family.to_string(), basis: basis.to_string() });
    }
    match (params, basis) {
        (EFParams::Gamma { alpha, .. }, Basis::Sqrt) if *alpha <= 0.5 => {
            Err(outside("gamma sqrt bridge needs alpha > 0.5"))
        }
        (EFParams::ChiSquared { k }, Basis::Sqrt) if *k <= 1.0 => Err(outside("chi-squared sqrt bridge needs k > 1")),
        (EFParams::Wishart { n, v }, Basis::MatrixSqrt) if *n <= v.nrows() as f64 => {
            Err(outside("wishart sqrtm bridge needs n > p"))
        }
        _ => Ok(()),
    }
}

/// `w(t) = (cosh t − 1)/t²`.
fn cosh_weight(t: f64) -> f64 {
    if t.abs() < 1e-4 {
        0.5 + t * t / 24.0
    } else {
        let s = (t / 2.0).sinh() / (t / 2.0);
        0.5 * s * s
    }
}

/// `u_i ⊗ u_k` as a `p²×1` matrix.
fn col_kron(vecs: &DMatrix<f64>, i: usize, k: usize) -> DMatrix<f64> {
    kron(
        &DMatrix::from_column_slice(vecs.nrows(), 1, vecs.column(i).as_slice()),
        &DMatrix::from_column_slice(vecs.nrows(), 1, vecs.column(k).as_slice()),
    )
}

/// Covariance of the log-matrix bridges: in the eigenbasis `U` of the mean,
/// pair `(i,k)` has precision `c·w(λ_i − λ_k)`.
fn logm_covariance(mu: &DMatrix<f64>, c: f64) -> Covariance {
    let p = mu.nrows();
    let (vals, vecs) = sym_eigen(mu);
    if vals.max() - vals.min() <= 1e-12 * (1.0 + vals.amax()) {
        return Covariance::ScaledIdentity { c: 2.0 / c, n: p * p };
    }
    let mut cov = DMatrix::zeros(p * p, p * p);
    for i in 0..p {
        for k in 0..p {
            let b = col_kron(&vecs, i, k);
            cov += (&b * b.transpose()) / (c * cosh_weight(vals[i] - vals[k]));
        }
    }
    Covariance::Dense(symmetrize(&cov))
}

/// `(A^{-1/2}⊗A^{-1/2} + I⊗A^{-1})^{-1}` for SPD `A`.
fn sqrtm_covariance(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let p = a.nrows();
    let (vals, vecs) = sym_eigen(a);
    let ainv_half = matrixops::from_eigen(&vals, &vecs, |v| 1.0 / v.sqrt());
    let ainv = matrixops::from_eigen(&vals, &vecs, |v| 1.0 / v);
    let prec = kron(&ainv_half, &ainv_half) + kron(&DMatrix::identity(p, p), &ainv);
    Ok(symmetrize(&spd_inverse(&symmetrize(&prec))?))
}

fn matrix_approx(mu: &DMatrix<f64>, cov: Covariance) -> GaussianApprox {
    let p = mu.nrows();
    GaussianApprox { mean: vec_rm(mu), cov, domain: LatentDomain::SymmetricMatrix { p } }
}

/// Closed-form Laplace Matching map `θ → (μ, Σ)` in a transformed basis.
pub fn lm_forward(params: &EFParams, spec: BridgeSpec) -> Result<GaussianApprox> {
    if spec.family != params.family() {
        return Err(Error::DomainMismatch(format!("spec is for {}, params are {}", spec.family, params.family())));
    }
    if spec.basis == Basis::Identity {
        return standard_laplace(params);
    }
    check_validity(params, spec.basis)?;
    let g = match (params, spec.basis) {
        (EFParams::Exponential { lambda }, Basis::Log) => GaussianApprox::scalar(lambda.recip().ln(), 1.0),
        (EFParams::Exponential { lambda }, Basis::Sqrt) => {
            GaussianApprox::scalar(1.0 / (2.0 * lambda).sqrt(), 1.0 / (4.0 * lambda))
        }
        (EFParams::Gamma { alpha, lambda }, Basis::Log) => GaussianApprox::scalar((alpha / lambda).ln(), 1.0 / alpha),
        (EFParams::Gamma { alpha, lambda }, Basis::Sqrt) => {
            GaussianApprox::scalar(((alpha - 0.5) / lambda).sqrt(), 1.0 / (4.0 * lambda))
        }
        (EFParams::InverseGamma { alpha, lambda }, Basis::Log) => {
            GaussianApprox::scalar((lambda / alpha).ln(), 1.0 / alpha)
        }
        (EFParams::InverseGamma { alpha, lambda }, Basis::Sqrt) => {
            let a = alpha + 0.5;
            GaussianApprox::scalar((lambda / a).sqrt(), lambda / (4.0 * a * a))
        }
        (EFParams::ChiSquared { k }, Basis::Log) => GaussianApprox::scalar(k.ln(), 2.0 / k),
        (EFParams::ChiSquared { k }, Basis::Sqrt) => GaussianApprox::scalar((k - 1.0).sqrt(), 0.5),
        (EFParams::Beta { alpha, beta }, Basis::Logit) => {
            GaussianApprox::scalar((alpha / beta).ln(), (alpha + beta) / (alpha * beta))
        }
        (EFParams::Dirichlet { alpha }, Basis::SoftmaxInverse) => dirichlet_forward(alpha),
        (EFParams::Wishart { n, v }, Basis::MatrixLog) => {
            let c = n - v.nrows() as f64 + 1.0;
            let mu = logm(&(v * c))?;
            let cov = logm_covariance(&mu, c);
            matrix_approx(&mu, cov)
        }
        (EFParams::Wishart { n, v }, Basis::MatrixSqrt) => {
            let mu = sqrtm(&(v * (n - v.nrows() as f64)))?;
            matrix_approx(&mu, Covariance::Dense(sqrtm_covariance(v)?))
        }
        (EFParams::InverseWishart { nu, psi }, Basis::MatrixLog) => {
            let m = nu + psi.nrows() as f64 - 1.0;
            let mu = logm(&(psi / m))?;
            let cov = logm_covariance(&mu, m);
            matrix_approx(&mu, cov)
        }
        (EFParams::InverseWishart { nu, psi }, Basis::MatrixSqrt) => {
            let m = nu + psi.nrows() as f64;
            let mu = sqrtm(&(psi / m))?;
            matrix_approx(&mu, Covariance::Dense(sqrtm_covariance(psi)? / (m * m)))
        }
        _ => return Err(Error::IncompatibleBasis { family: spec.family.to_string(), basis: spec.basis.to_string() }),
    };
    Ok(g)
}

fn dirichlet_forward(alpha: &[f64]) -> GaussianApprox {
    let k = alpha.len();
    let kf = k as f64;
    let logs: Vec<f64> = alpha.iter().map(|a| a.ln()).collect();
    let mlog = logs.iter().sum::<f64>() / kf;
    let inv: Vec<f64> = alpha.iter().map(|a| 1.0 / a).collect();
    let sinv: f64 = inv.iter().sum();
    let cov = DMatrix::from_fn(k, k, |i, j| {
        let d = if i == j { inv[i] } else { 0.0 };
        d - (inv[i] + inv[j] - sinv / kf) / kf
    });
    GaussianApprox {
        mean: DVector::from_iterator(k, logs.iter().map(|l| l - mlog)),
        cov: Covariance::Dense(cov),
        domain: LatentDomain::SimplexLatent { k },
    }
}

/// Inverse map `(μ, Σ) → θ` with default options.
pub fn lm_inverse(g: &GaussianApprox, family: Family, basis: Basis) -> Result<EFParams> {
    lm_inverse_with(g, family, basis, InverseOptions::default())
}

pub fn lm_inverse_with(g: &GaussianApprox, family: Family, basis: Basis, opts: InverseOptions) -> Result<EFParams> {
    if basis == Basis::Identity || !basis.compatible(family) {
        return Err(Error::IncompatibleBasis { family: family.to_string(), basis: basis.to_string() });
    }
    let mismatch = || Error::DomainMismatch(format!("{:?} does not match {family}/{basis}", g.domain));
    if g.cov.dim() != g.mean.len() {
        return Err(Error::DimensionMismatch("mean and covariance sizes differ".into()));
    }
    let params = if family.is_scalar() {
        if g.domain != LatentDomain::Scalar || g.mean.len() != 1 {
            return Err(mismatch());
        }
        let mu = g.mean[0];
        let s2 = g.cov.diagonal()[0];
        if !(s2 > 0.0) {
            return Err(Error::NotPositiveDefinite("variance must be positive".into()));
        }
        match (family, basis) {
            (Family::Exponential, Basis::Log) => EFParams::Exponential { lambda: (-mu).exp() },
            (Family::Exponential, Basis::Sqrt) => {
                if mu <= 0.0 {
                    return Err(Error::OutOfSupport("sqrt-basis mean must be positive".into()));
                }
                EFParams::Exponential { lambda: 1.0 / (2.0 * mu * mu) }
            }
            (Family::Gamma, Basis::Log) => EFParams::Gamma { alpha: 1.0 / s2, lambda: 1.0 / (mu.exp() * s2) },
            (Family::Gamma, Basis::Sqrt) => {
                EFParams::Gamma { alpha: mu * mu / (4.0 * s2) + 0.5, lambda: 1.0 / (4.0 * s2) }
            }
            (Family::InverseGamma, Basis::Log) => EFParams::InverseGamma { alpha: 1.0 / s2, lambda: mu.exp() / s2 },
            (Family::InverseGamma, Basis::Sqrt) => {
                EFParams::InverseGamma { alpha: mu * mu / (4.0 * s2) - 0.5, lambda: mu.powi(4) / (4.0 * s2) }
            }
            (Family::ChiSquared, Basis::Log) => EFParams::ChiSquared { k: mu.exp() },
            (Family::ChiSquared, Basis::Sqrt) => EFParams::ChiSquared { k: mu * mu + 1.0 },
            (Family::Beta, Basis::Logit) => {
                EFParams::Beta { alpha: (mu.exp() + 1.0) / s2, beta: ((-mu).exp() + 1.0) / s2 }
            }
            _ => return Err(mismatch()),
        }
    } else if family == Family::Dirichlet {
        let k = match g.domain {
            LatentDomain::SimplexLatent { k } if k == g.mean.len() => k,
            _ => return Err(mismatch()),
        };
        let kf = k as f64;
        let d = g.cov.diagonal();
        let s: f64 = g.mean.iter().map(|m| (-m).exp()).sum();
        let alpha: Vec<f64> = (0..k).map(|i| (1.0 - 2.0 / kf + g.mean[i].exp() * s / (kf * kf)) / d[i]).collect();
        EFParams::Dirichlet { alpha }
    } else {
        let p = match g.domain {
            LatentDomain::SymmetricMatrix { p } => p,
            _ => return Err(mismatch()),
        };
        let mu = unvec_rm(g.mean.as_slice(), p);
        if !matrixops::is_symmetric(&mu) {
            return Err(Error::DomainMismatch("matrix mean is not symmetric".into()));
        }
        let pf = p as f64;
        let (vals, vecs) = sym_eigen(&mu);
        // Σ restricted to the (u_i⊗u_i) directions.
        let diag_pairs: Vec<f64> = (0..p)
            .map(|i| {
                let b = col_kron(&vecs, i, i);
                match &g.cov {
                    Covariance::ScaledIdentity { c, .. } => *c,
                    other => (b.transpose() * other.to_dense() * &b)[(0, 0)],
                }
            })
            .collect();
        if diag_pairs.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::NotPositiveDefinite("covariance is not positive on the diagonal pairs".into()));
        }
        match basis {
            Basis::MatrixLog => {
                let c = match &g.cov {
                    Covariance::ScaledIdentity { c, n } => 2.0 * pf * pf / (c * *n as f64),
                    _ => diag_pairs.iter().map(|s| 2.0 / s).sum::<f64>() / pf,
                };
                let e = expm(&mu)?;
                if family == Family::Wishart {
                    EFParams::Wishart { n: c + pf - 1.0, v: e / c }
                } else {
                    EFParams::InverseWishart { nu: c - pf + 1.0, psi: e * c }
                }
            }
            Basis::MatrixSqrt => {
                if !opts.structured_sqrtm {
                    return Err(Error::NonInvertibleBridge(
                        "matrix-sqrt bridges are not invertible without the structured-covariance assumption".into(),
                    ));
                }
                if vals.min() <= 0.0 {
                    return Err(Error::OutOfSupport("sqrtm-basis mean must be positive definite".into()));
                }
                if family == Family::Wishart {
                    let v_eig: Vec<f64> = diag_pairs.iter().map(|s| 2.0 * s).collect();
                    let dof = (0..p).map(|i| vals[i] * vals[i] / v_eig[i]).sum::<f64>() / pf;
                    let v = matrixops::from_eigen(&DVector::from_vec(v_eig), &vecs, |x| x);
                    EFParams::Wishart { n: pf + dof, v }
                } else {
                    let m = (0..p).map(|i| vals[i] * vals[i] / (2.0 * diag_pairs[i])).sum::<f64>() / pf;
                    let psi = matrixops::from_eigen(&vals, &vecs, |x| m * x * x);
                    EFParams::InverseWishart { nu: m - pf, psi }
                }
            }
            _ => return Err(mismatch()),
        }
    };
    params.validate().map_err(|e| Error::NonInvertibleBridge(format!("inverse produced invalid parameters: {e}")))?;
    Ok(params)
}

/// Laplace approximation in the standard (identity) basis.
pub fn standard_laplace(params: &EFParams) -> Result<GaussianApprox> {
    params.validate()?;
    let none = |m: &str| Err(Error::NoValidLaplace(m.to_string()));
    match params {
        EFParams::Exponential { .. } => none("exponential density has zero curvature"),
        EFParams::Gamma { alpha, lambda } => {
            if *alpha <= 1.0 {
                return none("gamma needs alpha > 1");
            }
            Ok(GaussianApprox::scalar((alpha - 1.0) / lambda, (alpha - 1.0) / (lambda * lambda)))
        }
        EFParams::InverseGamma { alpha, lambda } => {
            let a = alpha + 1.0;
            Ok(GaussianApprox::scalar(lambda / a, lambda * lambda / (a * a * a)))
        }
        EFParams::ChiSquared { k } => {
            if *k <= 2.0 {
                return none("chi-squared needs k > 2");
            }
            Ok(GaussianApprox::scalar(k - 2.0, 2.0 * (k - 2.0)))
        }
        EFParams::Beta { alpha, beta } => {
            if *alpha <= 1.0 || *beta <= 1.0 {
                return none("beta needs alpha > 1 and beta > 1");
            }
            let s = alpha + beta - 2.0;
            Ok(GaussianApprox::scalar((alpha - 1.0) / s, (alpha - 1.0) * (beta - 1.0) / (s * s * s)))
        }
        EFParams::Dirichlet { alpha } => {
            if alpha.iter().any(|&a| a <= 1.0) {
                return none("dirichlet needs every alpha > 1");
            }
            let k = alpha.len();
            let a: Vec<f64> = alpha.iter().map(|x| x - 1.0).collect();
            let s: f64 = a.iter().sum();
            let cov = DMatrix::from_fn(k, k, |i, j| {
                let d = if i == j { a[i] } else { 0.0 };
                (d - a[i] * a[j] / s) / (s * s)
            });
            Ok(GaussianApprox {
                mean: DVector::from_iterator(k, a.iter().map(|x| x / s)),
                cov: Covariance::Dense(cov),
                domain: LatentDomain::Simplex { k },
            })
        }
        EFParams::Wishart { n, v } => {
            let p = v.nrows() as f64;
            let c = n - p - 1.0;
            if c <= 0.0 {
                return none("wishart needs n > p + 1");
            }
            Ok(matrix_approx(&(v * c), Covariance::Dense(kron(v, v) * (2.0 * c))))
        }
        EFParams::InverseWishart { nu, psi } => {
            let m = nu + psi.nrows() as f64 + 1.0;
            Ok(matrix_approx(&(psi / m), Covariance::Dense(kron(psi, psi) * (2.0 / (m * m * m)))))
        }
    }
}

/// One row of the exported bridge reference.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct BridgeEntry {
    pub family: Family,
    pub basis: Basis,
    pub forward: String,
    pub inverse: String,
    pub validity: String,
}

/// Machine-readable bridge reference, including the identity-basis rows.
pub fn bridge_table() -> Vec<BridgeEntry> {
    use Basis::*;
    use Family::*;
    let row = |family, basis, forward: &str, inverse: &str, validity: &str| BridgeEntry {
        family,
        basis,
        forward: forward.into(),
        inverse: inverse.into(),
        validity: validity.into(),
    };
    vec![
        row(Exponential, Log, "mu = -log(lambda); s2 = 1", "lambda = exp(-mu)", "lambda > 0"),
        row(Exponential, Sqrt, "mu = 1/sqrt(2 lambda); s2 = 1/(4 lambda)", "lambda = 1/(2 mu^2)", "lambda > 0"),
        row(Exponential, Identity, "none", "none", "never"),
        row(Gamma, Log, "mu = log(alpha/lambda); s2 = 1/alpha", "alpha = 1/s2; lambda = 1/(exp(mu) s2)", "alpha > 0"),
        row(Gamma, Sqrt, "mu = sqrt((alpha-0.5)/lambda); s2 = 1/(4 lambda)", "lambda = 1/(4 s2); alpha = mu^2/(4 s2) + 0.5", "alpha > 0.5"),
        row(Gamma, Identity, "mu = (alpha-1)/lambda; s2 = (alpha-1)/lambda^2", "none", "alpha > 1"),
        row(InverseGamma, Log, "mu = log(lambda/alpha); s2 = 1/alpha", "alpha = 1/s2; lambda = exp(mu)/s2", "alpha > 0"),
        row(InverseGamma, Sqrt, "mu = sqrt(lambda/(alpha+0.5)); s2 = lambda/(4 (alpha+0.5)^2)", "alpha = mu^2/(4 s2) - 0.5; lambda = mu^4/(4 s2)", "alpha > 0"),
        row(InverseGamma, Identity, "mu = lambda/(alpha+1); s2 = lambda^2/(alpha+1)^3", "none", "alpha > 0"),
        row(ChiSquared, Log, "mu = log(k); s2 = 2/k", "k = exp(mu)", "k > 0"),
        row(ChiSquared, Sqrt, "mu = sqrt(k-1); s2 = 1/2", "k = mu^2 + 1", "k > 1"),
        row(ChiSquared, Identity, "mu = k-2; s2 = 2(k-2)", "none", "k > 2"),
        row(Beta, Logit, "mu = log(alpha/beta); s2 = (alpha+beta)/(alpha beta)", "alpha = (exp(mu)+1)/s2; beta = (exp(-mu)+1)/s2", "alpha, beta > 0"),
        row(Beta, Identity, "mu = (alpha-1)/(alpha+beta-2); s2 = (alpha-1)(beta-1)/(alpha+beta-2)^3", "none", "alpha, beta > 1"),
        row(Dirichlet, SoftmaxInverse, "mu_k = log alpha_k - mean(log alpha); S_kl = d_kl/alpha_k - (1/K)(1/alpha_k + 1/alpha_l - (1/K) sum 1/alpha)", "alpha_k = (1 - 2/K + exp(mu_k) sum exp(-mu)/K^2)/S_kk", "alpha_k > 0"),
        row(Dirichlet, Identity, "mu = (alpha-1)/(sum alpha - K); S = (diag(a) - a a^T/s)/s^2, a = alpha-1, s = sum a", "none", "alpha_k > 1"),
        row(Wishart, MatrixLog, "mu = logm((n-p+1) V); S = 2/(n-p+1) I when V is isotropic, eigenbasis weights (cosh t - 1)/t^2 otherwise", "c = 2p^2/tr S; V = expm(mu)/c; n = c + p - 1", "n > p - 1"),
        row(Wishart, MatrixSqrt, "mu = sqrtm((n-p) V); S = (V^-1/2 (x) V^-1/2 + I (x) V^-1)^-1", "structured covariance only: V from S eigenbasis diagonal; n = p + mean(mu_i^2/v_i)", "n > p"),
        row(Wishart, Identity, "mu = (n-p-1) V; S = 2(n-p-1) V (x) V", "none", "n > p + 1"),
        row(InverseWishart, MatrixLog, "mu = logm(Psi/(nu+p-1)); S = 2/(nu+p-1) I when Psi is isotropic, eigenbasis weights otherwise", "m = 2p^2/tr S; nu = m - p + 1; Psi = m expm(mu)", "nu > p - 1"),
        row(InverseWishart, MatrixSqrt, "mu = sqrtm(Psi/(nu+p)); S = (Psi^-1/2 (x) Psi^-1/2 + I (x) Psi^-1)^-1/(nu+p)^2", "structured covariance only: m = mean(mu_i^2/(2 S_ii)); nu = m - p; Psi = m mu^2", "nu > p - 1"),
        row(InverseWishart, Identity, "mu = Psi/(nu+p+1); S = 2/(nu+p+1)^3 Psi (x) Psi", "none", "nu > p - 1"),
    ]
}
