//! Gaussian-process regression with heteroskedastic (block) noise, kernel
//! algebra, k-means and conjugate inducing sets.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::bridges::{lm_forward, BridgeSpec, GaussianApprox};
use crate::distributions::{conjugate_update, rng_from_seed, EFParams, Observations};
use crate::error::{Error, Result};
use crate::matrixops::{self, sym_eigen, symmetrize};
use crate::transforms::Basis;

/// Covariance functions on real input vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Kernel {
    Rbf {
        lengthscale: f64,
        variance: f64,
    },
    RationalQuadratic {
        lengthscale: f64,
        alpha: f64,
        variance: f64,
    },
    /// `variance · ⟨x, x'⟩ + offset`.
    Linear {
        variance: f64,
        offset: f64,
    },
    Sum {
        kernels: Vec<Kernel>,
    },
    Product {
        kernels: Vec<Kernel>,
    },
    /// Gram matrix over a finite index set; the input's first coordinate
    /// is the index.
    LookupTable {
        gram: Vec<Vec<f64>>,
    },
    /// Applies `kernel` to the selected input coordinates.
    Active {
        dims: Vec<usize>,
        kernel: Box<Kernel>,
    },
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

impl Kernel {
    pub fn rbf(lengthscale: f64, variance: f64) -> Self {
        Kernel::Rbf { lengthscale, variance }
    }

    /// `a·I + b·11ᵀ` over `n` indices.
    pub fn identity_plus_uniform(n: usize, a: f64, b: f64) -> Self {
        Kernel::LookupTable { gram: (0..n).map(|i| (0..n).map(|j| if i == j { a + b } else { b }).collect()).collect() }
    }

    pub fn active(dims: Vec<usize>, kernel: Kernel) -> Self {
        Kernel::Active { dims, kernel: Box::new(kernel) }
    }

    /// Checks hyperparameter positivity and lookup-table PSD-ness.
    pub fn validate(&self) -> Result<()> {
        let pos = |v: f64, name: &str| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidParams(format!("kernel {name} must be positive, got {v}")))
            }
        };
        match self {
            Kernel::Rbf { lengthscale, variance } => {
                pos(*lengthscale, "lengthscale")?;
                pos(*variance, "variance")
            }
            Kernel::RationalQuadratic { lengthscale, alpha, variance } => {
                pos(*lengthscale, "lengthscale")?;
                pos(*alpha, "alpha")?;
                pos(*variance, "variance")
            }
            Kernel::Linear { variance, offset } => {
                pos(*variance, "variance")?;
                if *offset < 0.0 {
                    return Err(Error::InvalidParams("linear offset must be non-negative".into()));
                }
                Ok(())
            }
            Kernel::Sum { kernels } | Kernel::Product { kernels } => {
                if kernels.is_empty() {
                    return Err(Error::InvalidParams("empty kernel combination".into()));
                }
                kernels.iter().try_for_each(|k| k.validate())
            }
            Kernel::LookupTable { gram } => {
                let n = gram.len();
                if n == 0 || gram.iter().any(|r| r.len() != n) {
                    return Err(Error::DimensionMismatch("lookup gram must be square and non-empty".into()));
                }
                let m = DMatrix::from_fn(n, n, |i, j| gram[i][j]);
                if !matrixops::is_symmetric(&m) {
                    return Err(Error::InvalidParams("lookup gram is not symmetric".into()));
                }
                let (vals, _) = sym_eigen(&m);
                if vals.min() < -1e-10 * m.trace().abs() {
                    return Err(Error::NotPositiveDefinite("lookup gram is not PSD".into()));
                }
                Ok(())
            }
            Kernel::Active { kernel, .. } => kernel.validate(),
        }
    }

    /// Minimum input dimension this kernel reads.
    pub fn input_dim(&self) -> usize {
        match self {
            Kernel::Sum { kernels } | Kernel::Product { kernels } => {
                kernels.iter().map(|k| k.input_dim()).max().unwrap_or(0)
            }
            Kernel::Active { dims, .. } => dims.iter().map(|d| d + 1).max().unwrap_or(0),
            Kernel::LookupTable { .. } => 1,
            _ => 0,
        }
    }

    /// `k(a, b)`; lookup indices must be in range.
    pub fn eval(&self, a: &[f64], b: &[f64]) -> Result<f64> {
        Ok(match self {
            Kernel::Rbf { lengthscale, variance } => {
                variance * (-0.5 * sq_dist(a, b) / (lengthscale * lengthscale)).exp()
            }
            Kernel::RationalQuadratic { lengthscale, alpha, variance } => {
                variance * (1.0 + sq_dist(a, b) / (2.0 * alpha * lengthscale * lengthscale)).powf(-alpha)
            }
            Kernel::Linear { variance, offset } => variance * a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() + offset,
            Kernel::Sum { kernels } => {
                let mut s = 0.0;
                for k in kernels {
                    s += k.eval(a, b)?;
                }
                s
            }
            Kernel::Product { kernels } => {
                let mut s = 1.0;
                for k in kernels {
                    s *= k.eval(a, b)?;
                }
                s
            }
            Kernel::LookupTable { gram } => {
                let idx = |v: &[f64]| -> Result<usize> {
                    let x = *v.first().ok_or_else(|| Error::DimensionMismatch("lookup needs one input".into()))?;
                    let i = x.round();
                    if i < 0.0 || i as usize >= gram.len() || (x - i).abs() > 1e-9 {
                        return Err(Error::IndexOutOfRange { index: i.max(0.0) as usize, len: gram.len() });
                    }
                    Ok(i as usize)
                };
                gram[idx(a)?][idx(b)?]
            }
            Kernel::Active { dims, kernel } => {
                let pick = |v: &[f64]| -> Result<Vec<f64>> {
                    dims.iter()
                        .map(|&d| {
                            v.get(d).copied().ok_or_else(|| {
                                Error::DimensionMismatch(format!("input has {} coordinates, kernel reads {d}", v.len()))
                            })
                        })
                        .collect()
                };
                kernel.eval(&pick(a)?, &pick(b)?)?
            }
        })
    }

    /// Log-scale hyperparameters, in a fixed traversal order.
    pub fn log_params(&self) -> Vec<f64> {
        match self {
            Kernel::Rbf { lengthscale, variance } => vec![lengthscale.ln(), variance.ln()],
            Kernel::RationalQuadratic { lengthscale, alpha, variance } => {
                vec![lengthscale.ln(), alpha.ln(), variance.ln()]
            }
            Kernel::Linear { variance, .. } => vec![variance.ln()],
            Kernel::Sum { kernels } | Kernel::Product { kernels } => {
                kernels.iter().flat_map(|k| k.log_params()).collect()
            }
            Kernel::LookupTable { .. } => vec![],
            Kernel::Active { kernel, .. } => kernel.log_params(),
        }
    }

    /// Inverse of [`Kernel::log_params`].
    pub fn with_log_params(&self, p: &[f64]) -> Kernel {
        let mut it = p.iter().copied();
        self.rebuild(&mut it)
    }

    fn rebuild(&self, it: &mut impl Iterator<Item = f64>) -> Kernel {
        let mut next = |old: f64| it.next().map(f64::exp).unwrap_or(old);
        match self {
            Kernel::Rbf { lengthscale, variance } => {
                let l = next(*lengthscale);
                Kernel::Rbf { lengthscale: l, variance: next(*variance) }
            }
            Kernel::RationalQuadratic { lengthscale, alpha, variance } => {
                let l = next(*lengthscale);
                let a = next(*alpha);
                Kernel::RationalQuadratic { lengthscale: l, alpha: a, variance: next(*variance) }
            }
            Kernel::Linear { variance, offset } => Kernel::Linear { variance: next(*variance), offset: *offset },
            Kernel::Sum { kernels } => Kernel::Sum { kernels: kernels.iter().map(|k| k.rebuild(it)).collect() },
            Kernel::Product { kernels } => Kernel::Product { kernels: kernels.iter().map(|k| k.rebuild(it)).collect() },
            Kernel::LookupTable { gram } => Kernel::LookupTable { gram: gram.clone() },
            Kernel::Active { dims, kernel } => {
                Kernel::Active { dims: dims.clone(), kernel: Box::new(kernel.rebuild(it)) }
            }
        }
    }
}

/// Gram matrix `K[i,j] = k(a_i, b_j)`.
pub fn kernel_matrix(k: &Kernel, a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let mut m = DMatrix::zeros(a.len(), b.len());
    for (i, x) in a.iter().enumerate() {
        for (j, y) in b.iter().enumerate() {
            m[(i, j)] = k.eval(x, y)?;
        }
    }
    Ok(m)
}

/// Median pairwise Euclidean distance (1.0 for fewer than two points or
/// all-equal points).
pub fn median_distance(points: &[Vec<f64>]) -> f64 {
    let mut d = Vec::new();
    for i in 0..points.len() {
        for j in (i + 1)..points.len() {
            d.push(sq_dist(&points[i], &points[j]).sqrt());
        }
    }
    d.retain(|v| *v > 0.0);
    if d.is_empty() {
        return 1.0;
    }
    d.sort_by(f64::total_cmp);
    let n = d.len();
    if n % 2 == 1 {
        d[n / 2]
    } else {
        0.5 * (d[n / 2 - 1] + d[n / 2])
    }
}

/// Prior mean function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PriorMean {
    Constant {
        value: f64,
    },
    /// `values[round(x[dim])]`.
    Lookup {
        dim: usize,
        values: Vec<f64>,
    },
}

impl Default for PriorMean {
    fn default() -> Self {
        PriorMean::Constant { value: 0.0 }
    }
}

impl PriorMean {
    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        match self {
            PriorMean::Constant { value } => Ok(*value),
            PriorMean::Lookup { dim, values } => {
                let v = *x.get(*dim).ok_or_else(|| Error::DimensionMismatch("prior mean lookup dimension".into()))?;
                let i = v.round();
                if i < 0.0 || i as usize >= values.len() {
                    return Err(Error::IndexOutOfRange { index: i.max(0.0) as usize, len: values.len() });
                }
                Ok(values[i as usize])
            }
        }
    }
}

/// Training noise covariance.
#[derive(Debug, Clone, PartialEq)]
pub enum Noise {
    Diagonal(DVector<f64>),
    /// Consecutive blocks along the training order.
    BlockDiagonal(Vec<DMatrix<f64>>),
    Dense(DMatrix<f64>),
}

impl Noise {
    pub fn dim(&self) -> usize {
        match self {
            Noise::Diagonal(d) => d.len(),
            Noise::BlockDiagonal(b) => b.iter().map(|m| m.nrows()).sum(),
            Noise::Dense(m) => m.nrows(),
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        match self {
            Noise::Diagonal(d) => DMatrix::from_diagonal(d),
            Noise::Dense(m) => m.clone(),
            Noise::BlockDiagonal(blocks) => {
                let n = self.dim();
                let mut m = DMatrix::zeros(n, n);
                let mut o = 0;
                for b in blocks {
                    let k = b.nrows();
                    m.view_mut((o, o), (k, k)).copy_from(b);
                    o += k;
                }
                m
            }
        }
    }

    fn add_to(&self, k: &mut DMatrix<f64>) {
        match self {
            Noise::Diagonal(d) => {
                for i in 0..d.len() {
                    k[(i, i)] += d[i];
                }
            }
            Noise::Dense(m) => *k += m,
            Noise::BlockDiagonal(blocks) => {
                let mut o = 0;
                for b in blocks {
                    let n = b.nrows();
                    for i in 0..n {
                        for j in 0..n {
                            k[(o + i, o + j)] += b[(i, j)];
                        }
                    }
                    o += n;
                }
            }
        }
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: &DMatrix<f64>| {
            let (vals, _) = sym_eigen(m);
            !matrixops::is_symmetric(m) || vals.min() < -1e-10 * m.trace().abs().max(1e-300)
        };
        let ok = match self {
            Noise::Diagonal(d) => d.iter().all(|v| *v >= 0.0 && v.is_finite()),
            Noise::Dense(m) => !bad(m),
            Noise::BlockDiagonal(b) => b.iter().all(|m| m.is_square() && !bad(m)),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::NotPositiveDefinite("noise covariance is not PSD".into()))
        }
    }
}

/// A fitted GP with a cached Cholesky factor of `K_XX + Σ_X + jitter·I`.
#[derive(Debug, Clone)]
pub struct GPModel {
    pub kernel: Kernel,
    pub inputs: Vec<Vec<f64>>,
    pub targets: DVector<f64>,
    pub noise: Noise,
    pub prior_mean: PriorMean,
    /// Lower-triangular factor.
    pub chol: DMatrix<f64>,
    /// `(K_XX + Σ_X)⁻¹ (μ_X − m_X)`.
    pub weights: DVector<f64>,
    /// Diagonal jitter that was needed for the factorization.
    pub jitter: f64,
}

const JITTER_LADDER: [f64; 6] = [0.0, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6];

/// Cholesky with the jitter ladder (relative to the mean diagonal).
pub fn jittered_cholesky(a: &DMatrix<f64>) -> Result<(DMatrix<f64>, f64)> {
    let n = a.nrows();
    if n == 0 {
        return Ok((DMatrix::zeros(0, 0), 0.0));
    }
    let scale = (a.trace() / n as f64).abs().max(1e-300);
    for rel in JITTER_LADDER {
        let jitter = rel * scale;
        let mut m = symmetrize(a);
        for i in 0..n {
            m[(i, i)] += jitter;
        }
        if let Some(c) = m.cholesky() {
            return Ok((c.l(), jitter));
        }
    }
    Err(Error::NotPositiveDefinite("matrix not PD after jitter 1e-6".into()))
}

pub fn gp_fit(
    kernel: &Kernel,
    inputs: &[Vec<f64>],
    targets: &DVector<f64>,
    noise: &Noise,
    prior_mean: &PriorMean,
) -> Result<GPModel> {
    kernel.validate()?;
    let n = inputs.len();
    if targets.len() != n || noise.dim() != n {
        return Err(Error::DimensionMismatch(format!(
            "{n} inputs, {} targets, noise of size {}",
            targets.len(),
            noise.dim()
        )));
    }
    noise.validate()?;
    let mut k = kernel_matrix(kernel, inputs, inputs)?;
    noise.add_to(&mut k);
    let (chol, jitter) = jittered_cholesky(&k)?;
    let mut resid = targets.clone();
    for (i, x) in inputs.iter().enumerate() {
        resid[i] -= prior_mean.eval(x)?;
    }
    let weights = if n == 0 { resid } else { cholesky_solve(&chol, &resid) };
    Ok(GPModel {
        kernel: kernel.clone(),
        inputs: inputs.to_vec(),
        targets: targets.clone(),
        noise: noise.clone(),
        prior_mean: prior_mean.clone(),
        chol,
        weights,
        jitter,
    })
}

fn cholesky_solve(l: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let y = l.solve_lower_triangular(b).expect("triangular factor");
    l.transpose().solve_upper_triangular(&y).expect("triangular factor")
}

/// Predictive mean, marginal variances and (optionally) full covariance.
#[derive(Debug, Clone)]
pub struct GpPrediction {
    pub mean: DVector<f64>,
    pub variance: DVector<f64>,
    pub cov: Option<DMatrix<f64>>,
}

pub fn gp_predict(model: &GPModel, queries: &[Vec<f64>], want_cov: bool) -> Result<GpPrediction> {
    let m = queries.len();
    let mut mean = DVector::zeros(m);
    for (i, q) in queries.iter().enumerate() {
        mean[i] = model.prior_mean.eval(q)?;
    }
    let kqq = if want_cov {
        kernel_matrix(&model.kernel, queries, queries)?
    } else {
        let mut d = DMatrix::zeros(m, 1);
        for (i, q) in queries.iter().enumerate() {
            d[(i, 0)] = model.kernel.eval(q, q)?;
        }
        d
    };
    if model.inputs.is_empty() {
        let variance = if want_cov { kqq.diagonal() } else { kqq.column(0).into_owned() };
        return Ok(GpPrediction { mean, variance, cov: want_cov.then_some(kqq) });
    }
    let kxq = kernel_matrix(&model.kernel, &model.inputs, queries)?;
    mean += kxq.transpose() * &model.weights;
    let v = model.chol.solve_lower_triangular(&kxq).expect("triangular factor");
    if want_cov {
        let cov = symmetrize(&(kqq - v.transpose() * &v));
        let variance = cov.diagonal().map(|x| x.max(0.0));
        Ok(GpPrediction { mean, variance, cov: Some(cov) })
    } else {
        let variance = DVector::from_fn(m, |i, _| (kqq[(i, 0)] - v.column(i).norm_squared()).max(0.0));
        Ok(GpPrediction { mean, variance, cov: None })
    }
}

/// Symmetric square root factor with negative eigenvalues clamped to 0.
pub fn psd_sqrt(cov: &DMatrix<f64>) -> DMatrix<f64> {
    let (vals, vecs) = sym_eigen(cov);
    let mut f = vecs.clone();
    for (j, v) in vals.iter().enumerate() {
        let s = v.max(0.0).sqrt();
        f.column_mut(j).scale_mut(s);
    }
    f
}

/// Joint draws from the predictive distribution at `queries`.
pub fn gp_sample(model: &GPModel, queries: &[Vec<f64>], seed: u64, count: usize) -> Result<Vec<DVector<f64>>> {
    let pred = gp_predict(model, queries, true)?;
    let f = psd_sqrt(pred.cov.as_ref().expect("covariance requested"));
    let mut rng = rng_from_seed(seed);
    let n = queries.len();
    Ok((0..count)
        .map(|_| {
            let z = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
            &pred.mean + &f * z
        })
        .collect())
}

/// `log p(μ_X | X)` under the model.
pub fn log_marginal_likelihood(model: &GPModel) -> Result<f64> {
    let n = model.inputs.len();
    let mut resid = model.targets.clone();
    for (i, x) in model.inputs.iter().enumerate() {
        resid[i] -= model.prior_mean.eval(x)?;
    }
    let logdet: f64 = model.chol.diagonal().iter().map(|v| v.ln()).sum();
    Ok(-0.5 * resid.dot(&model.weights) - logdet - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln())
}

/// Gradient-free coordinate search on log-hyperparameters maximizing the
/// marginal likelihood. Returns the best kernel found.
pub fn optimize_hyperparameters(
    kernel: &Kernel,
    inputs: &[Vec<f64>],
    targets: &DVector<f64>,
    noise: &Noise,
    prior_mean: &PriorMean,
    rounds: usize,
) -> Result<Kernel> {
    let score = |p: &[f64]| -> f64 {
        let k = kernel.with_log_params(p);
        gp_fit(&k, inputs, targets, noise, prior_mean)
            .and_then(|m| log_marginal_likelihood(&m))
            .unwrap_or(f64::NEG_INFINITY)
    };
    let mut p = kernel.log_params();
    let mut best = score(&p);
    let mut step = 1.0;
    for _ in 0..rounds {
        let mut improved = false;
        for i in 0..p.len() {
            for dir in [1.0, -1.0] {
                let mut c = p.clone();
                c[i] += dir * step;
                let s = score(&c);
                if s > best {
                    best = s;
                    p = c;
                    improved = true;
                    break;
                }
            }
        }
        if !improved {
            step *= 0.5;
            if step < 1e-3 {
                break;
            }
        }
    }
    Ok(kernel.with_log_params(&p))
}

/// Result of [`kmeans`].
#[derive(Debug, Clone, PartialEq)]
pub struct KMeans {
    pub centers: Vec<Vec<f64>>,
    pub assignment: Vec<usize>,
}

const KMEANS_ITER: usize = 100;
const KMEANS_ATTEMPTS: usize = 5;

fn nearest(p: &[f64], centers: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, ctr) in centers.iter().enumerate() {
        let d = sq_dist(p, ctr);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn kmeans_once(points: &[Vec<f64>], k: usize, seed: u64) -> std::result::Result<KMeans, usize> {
    let mut rng = rng_from_seed(seed);
    let n = points.len();
    let mut centers = vec![points[rng.random_range(0..n)].clone()];
    while centers.len() < k {
        let d: Vec<f64> = points.iter().map(|p| nearest(p, &centers).1).collect();
        let total: f64 = d.iter().sum();
        let idx = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, w) in d.iter().enumerate() {
                if u < *w {
                    pick = i;
                    break;
                }
                u -= w;
            }
            pick
        } else {
            rng.random_range(0..n)
        };
        centers.push(points[idx].clone());
    }
    let mut assignment = vec![usize::MAX; n];
    for _ in 0..KMEANS_ITER {
        let next: Vec<usize> = points.iter().map(|p| nearest(p, &centers).0).collect();
        let changed = next != assignment;
        assignment = next;
        let dim = points[0].len();
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &a) in points.iter().zip(&assignment) {
            counts[a] += 1;
            for (s, v) in sums[a].iter_mut().zip(p) {
                *s += v;
            }
        }
        if let Some(empty) = counts.iter().position(|&c| c == 0) {
            return Err(empty);
        }
        for c in 0..k {
            centers[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
        }
        if !changed {
            break;
        }
    }
    Ok(KMeans { centers, assignment })
}

/// k-means++ with Lloyd iterations; re-seeds on empty clusters.
pub fn kmeans(points: &[Vec<f64>], k: usize, seed: u64) -> Result<KMeans> {
    if points.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if k == 0 || k > points.len() {
        return Err(Error::InvalidParams(format!("cluster count {k} must be in 1..={}", points.len())));
    }
    let mut last = 0;
    for attempt in 0..KMEANS_ATTEMPTS as u64 {
        match kmeans_once(points, k, seed.wrapping_add(attempt.wrapping_mul(0x9E37_79B9_7F4A_7C15))) {
            Ok(r) => return Ok(r),
            Err(c) => last = c,
        }
    }
    Err(Error::EmptyCluster(last))
}

/// Cluster-level pseudo-likelihoods.
#[derive(Debug, Clone)]
pub struct InducingSet {
    pub centers: Vec<Vec<f64>>,
    pub assignment: Vec<usize>,
    pub params: Vec<EFParams>,
    pub approx: Vec<GaussianApprox>,
}

/// Clusters `inputs`, folds each cluster's observations into `prior` by
/// conjugacy and maps the result through the bridge for `basis`.
pub fn build_inducing_set(
    inputs: &[Vec<f64>],
    observations: &[Observations],
    k: usize,
    prior: &EFParams,
    basis: Basis,
    seed: u64,
) -> Result<InducingSet> {
    if inputs.len() != observations.len() {
        return Err(Error::DimensionMismatch("one observation batch per input is required".into()));
    }
    let km = kmeans(inputs, k, seed)?;
    let mut params = vec![prior.clone(); k];
    for (obs, &c) in observations.iter().zip(&km.assignment) {
        params[c] = conjugate_update(&params[c], obs)?;
    }
    let spec = BridgeSpec { family: prior.family(), basis };
    let approx = params.iter().map(|p| lm_forward(p, spec)).collect::<Result<Vec<_>>>()?;
    Ok(InducingSet { centers: km.centers, assignment: km.assignment, params, approx })
}
