//! Approximation-quality diagnostics and parameter sweeps.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{StandardNormal, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bridges::{lm_forward, standard_laplace, BridgeSpec, Covariance, GaussianApprox, LatentDomain};
use crate::distributions::{derive_seed, log_pdf, rng_from_seed, EFParams, Family, Sampler};
use crate::error::{Error, Result};
use crate::gp::{median_distance, Kernel};
use crate::transforms::{centered_log, push_forward, Basis, BasisTransform, LogDensity, TransformedDensity};

/// Draws per parallel chunk of a Monte-Carlo estimate.
const CHUNK: usize = 16_384;

/// The default sweep grid for a family: ten rows of increasing parameters.
pub fn default_grid(family: Family) -> Vec<EFParams> {
    let v0 = DMatrix::from_row_slice(2, 2, &[0.75, 0.5, 0.5, 1.0]);
    (0..10)
        .map(|i| {
            let t = i as f64;
            match family {
                Family::Exponential => EFParams::Exponential { lambda: t + 1.0 },
                Family::Gamma => EFParams::Gamma { alpha: 0.5 + t, lambda: 0.5 + 0.5 * t },
                Family::InverseGamma => EFParams::InverseGamma { alpha: 1.0 + t, lambda: 0.5 + 0.5 * t },
                Family::ChiSquared => EFParams::ChiSquared { k: t + 1.0 },
                Family::Beta => EFParams::Beta { alpha: 0.7 + 0.5 * t, beta: 0.8 + 0.25 * t },
                Family::Dirichlet => {
                    EFParams::Dirichlet { alpha: [1.5, 1.0, 0.75].iter().map(|a| 0.8 * a * (t + 1.0)).collect() }
                }
                Family::Wishart => EFParams::Wishart { n: 2.5 + 1.25 * t, v: &v0 * (1.0 + 0.25 * t) },
                Family::InverseWishart => EFParams::InverseWishart { nu: 2.5 + 1.25 * t, psi: &v0 * (1.0 + 0.25 * t) },
            }
        })
        .collect()
}

/// Default KL sample count: 10⁶ for scalar families, 10⁵ otherwise.
pub fn default_kl_samples(family: Family) -> usize {
    if family.is_scalar() {
        1_000_000
    } else {
        100_000
    }
}

/// A Monte-Carlo mean with its jackknife standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KlEstimate {
    pub estimate: f64,
    pub std_error: f64,
    /// Draws that contributed.
    pub n: usize,
    /// Draws dropped because a log-density was not finite (underflow at
    /// the support boundary).
    pub skipped: usize,
}

#[derive(Debug, Clone, Copy, Default)]
struct Moments {
    n: usize,
    mean: f64,
    m2: f64,
    skipped: usize,
}

impl Moments {
    fn push(&mut self, v: f64) {
        if !v.is_finite() {
            self.skipped += 1;
            return;
        }
        self.n += 1;
        let d = v - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (v - self.mean);
    }

    fn merge(self, o: Moments) -> Moments {
        if self.n == 0 {
            return Moments { skipped: self.skipped + o.skipped, ..o };
        }
        if o.n == 0 {
            return Moments { skipped: self.skipped + o.skipped, ..self };
        }
        let n = self.n + o.n;
        let d = o.mean - self.mean;
        Moments {
            n,
            mean: self.mean + d * o.n as f64 / n as f64,
            m2: self.m2 + o.m2 + d * d * (self.n as f64 * o.n as f64) / n as f64,
            skipped: self.skipped + o.skipped,
        }
    }

    /// Jackknife: leave-one-out means `θ₍ᵢ₎ = (S − xᵢ)/(n−1)` give
    /// `SE² = (n−1)/n · Σ(θ₍ᵢ₎ − θ̄)² = Σ(xᵢ − x̄)² / (n(n−1))`.
    fn finish(self) -> Result<KlEstimate> {
        if self.n < 2 {
            return Err(Error::SupportMismatch(format!("only {} finite log-ratios", self.n)));
        }
        let n = self.n as f64;
        Ok(KlEstimate {
            estimate: self.mean,
            std_error: (self.m2 / (n * (n - 1.0))).sqrt(),
            n: self.n,
            skipped: self.skipped,
        })
    }
}

/// Averages `f(draw)` over `n` draws from `params`, in seeded parallel
/// chunks whose results are merged in chunk order.
fn mc_mean<F>(params: &EFParams, n: usize, seed: u64, f: F) -> Result<KlEstimate>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    if n < 2 {
        return Err(Error::InvalidParams("at least two samples are needed".into()));
    }
    let sampler = Sampler::new(params)?;
    let chunks = n.div_ceil(CHUNK);
    let parts: Vec<Moments> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = rng_from_seed(derive_seed(seed, c as u64));
            let len = CHUNK.min(n - c * CHUNK);
            let mut x = vec![0.0; sampler.point_dim()];
            let mut m = Moments::default();
            for _ in 0..len {
                sampler.draw_into(&mut rng, &mut x);
                m.push(f(&x));
            }
            m
        })
        .collect();
    parts.into_iter().fold(Moments::default(), Moments::merge).finish()
}

/// `KL(p ‖ q) ≈ (1/N) Σ log p(yᵢ)/q(yᵢ)` with `yᵢ` the transformed draws of
/// `p`'s source distribution.
pub fn mc_kl(p: &TransformedDensity, q: &GaussianApprox, n: usize, seed: u64) -> Result<KlEstimate> {
    let q_eval = q.evaluator()?;
    if q_eval.mean.len() != p.dim() {
        return Err(Error::SupportMismatch(format!(
            "density has {} coordinates, Gaussian has {}",
            p.dim(),
            q_eval.mean.len()
        )));
    }
    mc_mean(&p.source, n, seed, |x| match p.coords_from_sample(x) {
        Ok(z) => p.log_density(&z) - q_eval.log_pdf(&z),
        Err(_) => f64::NAN,
    })
}

/// Covariance seen by the constrained Dirichlet KL.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovarianceView {
    #[default]
    Full,
    /// Only the marginal variances, re-constrained by the rank-1 projection.
    Diagonal,
}

/// Rank-1 projection onto `{x : 1ᵀx = 0}`:
/// `μ̄ = μ − Σ11ᵀμ/(1ᵀΣ1)`, `Σ̄ = Σ − Σ11ᵀΣ/(1ᵀΣ1)`.
pub fn constrain_sum_zero(mean: &DVector<f64>, cov: &DMatrix<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let s1 = cov.column_sum();
    let scale = cov.amax().max(f64::MIN_POSITIVE);
    if s1.amax() <= 1e-12 * scale && mean.sum().abs() <= 1e-12 * mean.amax().max(1.0) {
        return Ok((mean.clone(), cov.clone()));
    }
    let s = s1.sum();
    if s <= 1e-12 {
        return Err(Error::DegenerateProjection(s));
    }
    let m = mean - &s1 * (mean.sum() / s);
    let c = cov - &s1 * s1.transpose() / s;
    Ok((m, crate::matrixops::symmetrize(&c)))
}

/// KL between a Dirichlet and its softmax-basis Gaussian, evaluated on the
/// simplex: the Gaussian is constrained to `1ᵀx = 0`, reduced to its first
/// `K−1` coordinates and pulled back with `|∂u/∂y| = 1/(K ∏ yᵢ)`.
pub fn dirichlet_kl_constrained(alpha: &[f64], n: usize, seed: u64, view: CovarianceView) -> Result<KlEstimate> {
    let k = alpha.len();
    if k < 2 {
        return Err(Error::InvalidParams("need at least 2 components".into()));
    }
    let params = EFParams::Dirichlet { alpha: alpha.to_vec() };
    let g = lm_forward(&params, BridgeSpec::new(Family::Dirichlet, Basis::SoftmaxInverse)?)?;
    let cov = match view {
        CovarianceView::Full => g.cov_dense(),
        CovarianceView::Diagonal => DMatrix::from_diagonal(&g.cov.diagonal()),
    };
    let (m, c) = constrain_sum_zero(&g.mean, &cov)?;
    let q = crate::bridges::GaussianEvaluator::new(
        m.rows(0, k - 1).into_owned(),
        &c.view((0, 0), (k - 1, k - 1)).into_owned(),
    )?;
    let ln_k = (k as f64).ln();
    mc_mean(&params, n, seed, |y| {
        let x = centered_log(y);
        let log_q = q.log_pdf(&x[..k - 1]) - ln_k - y.iter().map(|v| v.ln()).sum::<f64>();
        log_pdf(&params, y).map(|lp| lp - log_q).unwrap_or(f64::NAN)
    })
}

/// Unbiased squared MMD:
/// `mean_{i≠j} k(xᵢ,xⱼ) + mean_{i≠j} k(yᵢ,yⱼ) − 2·mean_{i,j} k(xᵢ,yⱼ)`.
pub fn mmd(p: &[Vec<f64>], q: &[Vec<f64>], kernel: &Kernel) -> Result<f64> {
    if p.len() < 2 || q.len() < 2 {
        return Err(Error::InvalidParams("MMD needs at least two samples per set".into()));
    }
    let d = p[0].len();
    if p.iter().chain(q).any(|x| x.len() != d) {
        return Err(Error::DimensionMismatch("sample sets must share one dimension".into()));
    }
    let within = |s: &[Vec<f64>]| -> Result<f64> {
        let total = (0..s.len())
            .into_par_iter()
            .map(|i| (i + 1..s.len()).map(|j| kernel.eval(&s[i], &s[j])).sum::<Result<f64>>())
            .collect::<Result<Vec<f64>>>()?
            .iter()
            .sum::<f64>();
        let n = s.len() as f64;
        Ok(2.0 * total / (n * (n - 1.0)))
    };
    let cross = (0..p.len())
        .into_par_iter()
        .map(|i| q.iter().map(|y| kernel.eval(&p[i], y)).sum::<Result<f64>>())
        .collect::<Result<Vec<f64>>>()?
        .iter()
        .sum::<f64>()
        / (p.len() * q.len()) as f64;
    Ok(within(p)? + within(q)? - 2.0 * cross)
}

/// MMD with an RBF kernel whose lengthscale is the median pairwise
/// distance of the pooled samples.
pub fn mmd_median(p: &[Vec<f64>], q: &[Vec<f64>]) -> Result<f64> {
    let pooled: Vec<Vec<f64>> = p.iter().chain(q).cloned().collect();
    mmd(p, q, &Kernel::rbf(median_distance(&pooled), 1.0))
}

/// Elliptical slice sampling from `N(μ, Σ) · exp(log_likelihood)`.
/// Returns `n` states after `burn_in` discarded transitions.
pub fn ess_sample<F>(
    prior: &GaussianApprox,
    log_likelihood: F,
    n: usize,
    burn_in: usize,
    seed: u64,
) -> Result<Vec<DVector<f64>>>
where
    F: Fn(&DVector<f64>) -> f64,
{
    let chol = crate::matrixops::symmetrize(&prior.cov_dense())
        .cholesky()
        .ok_or_else(|| Error::NotPositiveDefinite("ESS prior covariance".into()))?
        .l();
    let mu = &prior.mean;
    let d = mu.len();
    let mut rng = rng_from_seed(seed);
    let angle = Uniform::new(0.0, std::f64::consts::TAU).expect("valid range");
    let mut f = mu.clone();
    let mut ll = log_likelihood(&f);
    let mut out = Vec::with_capacity(n);
    for step in 0..burn_in + n {
        let nu = &chol * DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let log_y = ll + rng.random::<f64>().ln();
        let mut theta = rng.sample(angle);
        let (mut lo, mut hi) = (theta - std::f64::consts::TAU, theta);
        let centered = &f - mu;
        loop {
            let prop = mu + &centered * theta.cos() + &nu * theta.sin();
            let lp = log_likelihood(&prop);
            if lp > log_y {
                f = prop;
                ll = lp;
                break;
            }
            if theta < 0.0 {
                lo = theta;
            } else {
                hi = theta;
            }
            theta = rng.random_range(lo..hi);
            if (hi - lo).abs() < 1e-300 {
                break;
            }
        }
        if step >= burn_in {
            out.push(f.clone());
        }
    }
    Ok(out)
}

/// Result of one basis at one grid point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasisDistance {
    pub basis: Basis,
    pub valid: bool,
    pub kl: Option<KlEstimate>,
    pub mmd: Option<f64>,
    /// Why the approximation is missing, for invalid entries.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub reason: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceRow {
    pub index: usize,
    pub params: EFParams,
    pub seed: u64,
    pub entries: Vec<BasisDistance>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceReport {
    pub family: Family,
    pub bases: Vec<Basis>,
    pub n: usize,
    pub mmd_samples: usize,
    pub seed: u64,
    pub rows: Vec<DistanceRow>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepOptions {
    /// KL draws per entry.
    pub n: usize,
    /// Draws per side for MMD; 0 disables MMD.
    pub mmd_samples: usize,
    pub seed: u64,
}

impl SweepOptions {
    pub fn for_family(family: Family, seed: u64) -> Self {
        SweepOptions { n: default_kl_samples(family), mmd_samples: 1000, seed }
    }
}

/// The approximation and transformed density for one basis.
pub fn approximation(params: &EFParams, basis: Basis) -> Result<(TransformedDensity, GaussianApprox)> {
    let q = if basis == Basis::Identity {
        standard_laplace(params)?
    } else {
        lm_forward(params, BridgeSpec::new(params.family(), basis)?)?
    };
    let p = push_forward(params, &BasisTransform::for_params(basis, params)?)?;
    Ok((p, q))
}

fn basis_distance(params: &EFParams, basis: Basis, row_seed: u64, opts: &SweepOptions) -> BasisDistance {
    let run = || -> Result<(KlEstimate, Option<f64>)> {
        let (p, q) = approximation(params, basis)?;
        let kl = mc_kl(&p, &q, opts.n, row_seed)?;
        let m = if opts.mmd_samples >= 2 {
            let mut rng = rng_from_seed(derive_seed(row_seed, 1));
            let sampler = Sampler::new(params)?;
            let ps = (0..opts.mmd_samples)
                .map(|_| p.coords_from_sample(&sampler.draw(&mut rng)))
                .collect::<Result<Vec<_>>>()?;
            let ps: Vec<Vec<f64>> = ps.into_iter().filter(|z| z.iter().all(|v| v.is_finite())).collect();
            let q_eval = q.evaluator()?;
            let mut rng = rng_from_seed(derive_seed(row_seed, 2));
            let qs: Vec<Vec<f64>> =
                (0..opts.mmd_samples).map(|_| q_eval.sample(&mut rng).iter().copied().collect()).collect();
            Some(mmd_median(&ps, &qs)?)
        } else {
            None
        };
        Ok((kl, m))
    };
    match run() {
        Ok((kl, m)) => BasisDistance { basis, valid: true, kl: Some(kl), mmd: m, reason: None },
        Err(e) => BasisDistance { basis, valid: false, kl: None, mmd: None, reason: Some(e.to_string()) },
    }
}

/// KL and MMD for every basis at every grid point. Failures are recorded
/// per entry. Row `i` uses seed `derive_seed(seed, i)` for all of its bases.
pub fn distance_sweep(
    family: Family,
    bases: &[Basis],
    grid: &[EFParams],
    opts: SweepOptions,
) -> Result<DistanceReport> {
    if let Some(p) = grid.iter().find(|p| p.family() != family) {
        return Err(Error::InvalidParams(format!("grid point of family {} in a {family} sweep", p.family())));
    }
    let rows = grid
        .par_iter()
        .enumerate()
        .map(|(i, params)| {
            let seed = derive_seed(opts.seed, i as u64);
            DistanceRow {
                index: i,
                params: params.clone(),
                seed,
                entries: bases.iter().map(|&b| basis_distance(params, b, seed, &opts)).collect(),
            }
        })
        .collect();
    Ok(DistanceReport {
        family,
        bases: bases.to_vec(),
        n: opts.n,
        mmd_samples: opts.mmd_samples,
        seed: opts.seed,
        rows,
    })
}

/// Identity followed by the family's transformed bases.
pub fn default_bases(family: Family) -> Vec<Basis> {
    std::iter::once(Basis::Identity).chain(Basis::transformed_for(family)).collect()
}

/// Gaussian on `d` Euclidean coordinates.
pub fn euclidean_gaussian(mean: DVector<f64>, cov: DMatrix<f64>) -> GaussianApprox {
    let d = mean.len();
    GaussianApprox { mean, cov: Covariance::Dense(cov), domain: LatentDomain::Euclidean { d } }
}

/// Largest deviation between two Gaussians on the same coordinates,
/// relative to the closed-form magnitudes (mean scale floored at 1).
/// Matrix Gaussians are compared on half-vectorized coordinates.
pub fn relative_deviation(closed: &GaussianApprox, numeric: &GaussianApprox) -> Result<f64> {
    let coords = |g: &GaussianApprox| -> Result<(DVector<f64>, DMatrix<f64>)> {
        match g.domain {
            LatentDomain::SymmetricMatrix { .. } => {
                let h = g.to_half_vec()?;
                Ok((h.mean.clone(), h.cov_dense()))
            }
            _ => Ok((g.mean.clone(), g.cov_dense())),
        }
    };
    let (cm, cc) = coords(closed)?;
    let (nm, nc) = coords(numeric)?;
    if cm.len() != nm.len() || cc.shape() != nc.shape() {
        return Err(Error::DimensionMismatch("Gaussians live on different coordinates".into()));
    }
    let dm = (&cm - &nm).amax() / cm.amax().max(1.0);
    let dc = (&cc - &nc).amax() / cc.amax().max(f64::MIN_POSITIVE);
    Ok(dm.max(dc))
}

/// Flattened parameters: scalars in declaration order, Dirichlet
/// concentrations, or degrees of freedom followed by the row-major matrix.
pub fn param_vector(params: &EFParams) -> Vec<f64> {
    match params {
        EFParams::Exponential { lambda } => vec![*lambda],
        EFParams::Gamma { alpha, lambda } | EFParams::InverseGamma { alpha, lambda } => vec![*alpha, *lambda],
        EFParams::ChiSquared { k } => vec![*k],
        EFParams::Beta { alpha, beta } => vec![*alpha, *beta],
        EFParams::Dirichlet { alpha } => alpha.clone(),
        EFParams::Wishart { n: d, v: m } | EFParams::InverseWishart { nu: d, psi: m } => {
            std::iter::once(*d).chain(crate::matrixops::vec_rm(m).iter().copied()).collect()
        }
    }
}

/// Largest entrywise relative difference between two parameter sets.
pub fn param_relative_error(a: &EFParams, b: &EFParams) -> f64 {
    if a.family() != b.family() {
        return f64::INFINITY;
    }
    let (x, y) = (param_vector(a), param_vector(b));
    if x.len() != y.len() {
        return f64::INFINITY;
    }
    let scale = x.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    x.iter().zip(&y).map(|(u, v)| (u - v).abs() / u.abs().max(1e-12 * scale)).fold(0.0, f64::max)
}

/// Tolerance on closed form vs numeric Laplace.
pub const ORACLE_TOLERANCE: f64 = 1e-6;
/// Tolerance on `lm_inverse ∘ lm_forward`.
pub const ROUND_TRIP_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleStatus {
    Pass,
    /// Both routes agree that no Laplace approximation exists.
    BothInvalid,
    Fail,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleRow {
    pub family: Family,
    pub basis: Basis,
    pub index: usize,
    pub params: EFParams,
    pub deviation: Option<f64>,
    pub round_trip: Option<f64>,
    pub status: OracleStatus,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub detail: Option<String>,
}

/// Inverse bridge used by the round-trip half of the oracle check.
pub type InverseFn = dyn Fn(&GaussianApprox, Family, Basis) -> Result<EFParams> + Sync;

/// The library inverse, with structured matrix-sqrt inversion.
pub fn default_inverse(g: &GaussianApprox, family: Family, basis: Basis) -> Result<EFParams> {
    crate::bridges::lm_inverse_with(g, family, basis, crate::bridges::InverseOptions { structured_sqrtm: true })
}

/// Closed form against numeric Laplace (determinant-only Jacobian), plus the
/// round trip through `inverse` for transformed bases.
pub fn oracle_point(params: &EFParams, basis: Basis, index: usize, inverse: &InverseFn) -> OracleRow {
    let family = params.family();
    let mut row = OracleRow {
        family,
        basis,
        index,
        params: params.clone(),
        deviation: None,
        round_trip: None,
        status: OracleStatus::Fail,
        detail: None,
    };
    let numeric = BasisTransform::for_params(basis, params)
        .and_then(|bt| {
            crate::transforms::push_forward_with(params, &bt, crate::transforms::JacobianConvention::DeterminantOnly)
        })
        .and_then(|d| crate::transforms::numeric_laplace(&d, &d.default_init(), crate::transforms::DEFAULT_TOLERANCE));
    let closed = if basis == Basis::Identity {
        standard_laplace(params)
    } else {
        BridgeSpec::new(family, basis).and_then(|s| lm_forward(params, s))
    };
    match (&closed, &numeric) {
        (Ok(c), Ok(n)) => {
            let dev = relative_deviation(c, n).unwrap_or(f64::INFINITY);
            row.deviation = Some(dev);
            let mut ok = dev <= ORACLE_TOLERANCE;
            if basis != Basis::Identity {
                match inverse(c, family, basis) {
                    Ok(back) => {
                        let e = param_relative_error(params, &back);
                        row.round_trip = Some(e);
                        ok &= e <= ROUND_TRIP_TOLERANCE;
                    }
                    Err(e) => {
                        ok = false;
                        row.detail = Some(format!("inverse failed: {e}"));
                    }
                }
            }
            row.status = if ok { OracleStatus::Pass } else { OracleStatus::Fail };
        }
        (Err(_), Err(e)) => {
            row.status = OracleStatus::BothInvalid;
            row.detail = Some(e.to_string());
        }
        (Ok(_), Err(e)) => row.detail = Some(format!("closed form exists but numeric search failed: {e}")),
        (Err(e), Ok(_)) => row.detail = Some(format!("numeric mode exists but closed form failed: {e}")),
    }
    row
}

/// Runs [`oracle_point`] over every selected pair and grid point.
pub fn oracle_check(
    selection: &[(Family, Basis)],
    grid: &(dyn Fn(Family) -> Vec<EFParams> + Sync),
    inverse: &InverseFn,
) -> Vec<OracleRow> {
    let jobs: Vec<(EFParams, Basis, usize)> =
        selection.iter().flat_map(|&(f, b)| grid(f).into_iter().enumerate().map(move |(i, p)| (p, b, i))).collect();
    jobs.par_iter().map(|(p, b, i)| oracle_point(p, *b, *i, inverse)).collect()
}
