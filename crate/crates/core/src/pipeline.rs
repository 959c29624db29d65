//! LM+GP inference: pseudo-likelihoods, bridging, GP regression on the
//! latent means, back-transformation of predictive samples, and metrics.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::bridges::{
    lm_forward, lm_inverse_with, BridgeSpec, Covariance, GaussianApprox, InverseOptions, LatentDomain,
};
use crate::distributions::{conjugate_update, derive_seed, EFParams, Family, Observations, ScatterObs};
use crate::error::{Error, Result};
use crate::gp::{self, gp_fit, gp_predict, gp_sample, kmeans, median_distance, GPModel, Kernel, Noise, PriorMean};
use crate::matrixops::{self, duplication, half_vec_dim, sym_eigen, unvech, vec_rm};
use crate::transforms::{softmax, Basis};

/// Binary labels at real-valued inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinaryData {
    pub x: Vec<Vec<f64>>,
    pub labels: Vec<bool>,
}

/// Non-negative counts at real-valued inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountData {
    pub x: Vec<Vec<f64>>,
    pub counts: Vec<u64>,
}

/// Class counts observed at time `t` in region `c`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoricalGroup {
    pub t: f64,
    pub c: usize,
    pub counts: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoricalData {
    pub classes: usize,
    pub regions: usize,
    pub groups: Vec<CategoricalGroup>,
}

/// A time series of observed covariance matrices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovarianceData {
    pub p: usize,
    pub times: Vec<f64>,
    #[serde(with = "matrix_list")]
    pub matrices: Vec<DMatrix<f64>>,
}

mod matrix_list {
    use nalgebra::DMatrix;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &[DMatrix<f64>], s: S) -> Result<S::Ok, S::Error> {
        let rows: Vec<Vec<Vec<f64>>> =
            m.iter().map(|a| (0..a.nrows()).map(|i| a.row(i).iter().copied().collect()).collect()).collect();
        rows.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<DMatrix<f64>>, D::Error> {
        let rows: Vec<Vec<Vec<f64>>> = Vec::deserialize(d)?;
        Ok(rows
            .into_iter()
            .map(|r| {
                let n = r.len();
                DMatrix::from_fn(n, n, |i, j| r[i].get(j).copied().unwrap_or(f64::NAN))
            })
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Dataset {
    Binary(BinaryData),
    Counts(CountData),
    Categorical(CategoricalData),
    Covariance(CovarianceData),
}

impl Dataset {
    /// The conjugate family this dataset is modeled with.
    pub fn family(&self) -> Family {
        match self {
            Dataset::Binary(_) => Family::Beta,
            Dataset::Counts(_) => Family::Gamma,
            Dataset::Categorical(_) => Family::Dirichlet,
            Dataset::Covariance(_) => Family::InverseWishart,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Dataset::Binary(_) => "binary",
            Dataset::Counts(_) => "count",
            Dataset::Categorical(_) => "categorical",
            Dataset::Covariance(_) => "covariance",
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Dataset::Binary(d) => d.labels.len(),
            Dataset::Counts(d) => d.counts.len(),
            Dataset::Categorical(d) => d.groups.len(),
            Dataset::Covariance(d) => d.matrices.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Version {
    #[default]
    V1,
    V2,
}

/// A GP prior on the latent space, used by V2.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorGp {
    pub kernel: Kernel,
    #[serde(default)]
    pub mean: PriorMean,
}

fn default_eps() -> f64 {
    0.01
}
fn default_one() -> f64 {
    1.0
}
fn default_samples() -> usize {
    1000
}
fn default_dof() -> f64 {
    20.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LMGPConfig {
    pub family: Family,
    pub basis: Basis,
    /// `None` selects a data-driven default kernel.
    #[serde(default)]
    pub kernel: Option<Kernel>,
    #[serde(default)]
    pub prior_mean: PriorMean,
    /// Pseudo-count of the conjugate prior.
    #[serde(default = "default_eps")]
    pub eps: f64,
    #[serde(default)]
    pub inducing: Option<usize>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub version: Version,
    /// Dirichlet prior pseudo-count per class.
    #[serde(default = "default_one")]
    pub dirichlet_prior: f64,
    /// Draws used for the data-domain summaries.
    #[serde(default = "default_samples")]
    pub n_samples: usize,
    /// Degrees of freedom attributed to each observed covariance matrix.
    #[serde(default = "default_dof")]
    pub scatter_dof: f64,
    #[serde(default)]
    pub keep_samples: bool,
    #[serde(default)]
    pub prior_gp: Option<PriorGp>,
}

impl LMGPConfig {
    pub fn new(family: Family, basis: Basis) -> Self {
        LMGPConfig {
            family,
            basis,
            kernel: None,
            prior_mean: PriorMean::default(),
            eps: default_eps(),
            inducing: None,
            seed: 0,
            version: Version::V1,
            dirichlet_prior: 1.0,
            n_samples: default_samples(),
            scatter_dof: default_dof(),
            keep_samples: false,
            prior_gp: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        BridgeSpec::new(self.family, self.basis)?;
        if !(self.eps > 0.0) || !(self.dirichlet_prior > 0.0) || !(self.scatter_dof > 0.0) {
            return Err(Error::InvalidParams("eps, dirichlet_prior and scatter_dof must be positive".into()));
        }
        if self.n_samples == 0 {
            return Err(Error::InvalidParams("n_samples must be at least 1".into()));
        }
        Ok(())
    }
}

/// Data-domain summary of transformed predictive draws at one query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointSummary {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub q05: Vec<f64>,
    pub q50: Vec<f64>,
    pub q95: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub inputs: Vec<Vec<f64>>,
    pub latent_mean: Vec<Vec<f64>>,
    /// Per-query latent covariance block.
    pub latent_cov: Vec<Vec<Vec<f64>>>,
    pub summary: Vec<PointSummary>,
    /// Direct back-transformation of each latent marginal via the inverse
    /// bridge (`None` where the inverse does not exist).
    pub params: Vec<Option<EFParams>>,
    /// Draws that fell outside the data-domain support.
    pub support_violations: usize,
    pub n_samples: usize,
    /// Per query, per draw, the data-domain point (only with `keep_samples`).
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub samples: Option<Vec<Vec<Vec<f64>>>>,
}

/// The latent problem: one group per pseudo-likelihood, `latent_dim` GP
/// outputs per group.
struct Problem {
    family: Family,
    basis: Basis,
    latent_dim: usize,
    dim: usize,
    inputs: Vec<Vec<f64>>,
    obs: Vec<Observations>,
    prior: EFParams,
}

fn build_problem(data: &Dataset, config: &LMGPConfig) -> Result<Problem> {
    config.validate()?;
    if data.family() != config.family {
        return Err(Error::NonConjugatePair { prior: config.family.to_string(), observations: data.kind().into() });
    }
    let eps = config.eps;
    let (inputs, obs, prior, latent_dim, dim) = match data {
        Dataset::Binary(d) => {
            check_lengths(d.x.len(), d.labels.len())?;
            (
                d.x.clone(),
                d.labels.iter().map(|&l| Observations::Bernoulli { labels: vec![l] }).collect(),
                EFParams::Beta { alpha: eps, beta: eps },
                1,
                1,
            )
        }
        Dataset::Counts(d) => {
            check_lengths(d.x.len(), d.counts.len())?;
            (
                d.x.clone(),
                d.counts.iter().map(|&c| Observations::Poisson { counts: vec![c] }).collect(),
                EFParams::Gamma { alpha: eps, lambda: eps },
                1,
                1,
            )
        }
        Dataset::Categorical(d) => {
            let k = d.classes;
            if k < 2 {
                return Err(Error::InvalidParams("categorical data needs at least 2 classes".into()));
            }
            for g in &d.groups {
                if g.counts.len() != k || g.c >= d.regions {
                    return Err(Error::DimensionMismatch("categorical group shape".into()));
                }
            }
            (
                d.groups.iter().map(|g| vec![g.t, g.c as f64]).collect(),
                d.groups.iter().map(|g| Observations::Categorical { counts: g.counts.clone() }).collect(),
                EFParams::Dirichlet { alpha: vec![config.dirichlet_prior; k] },
                k,
                k,
            )
        }
        Dataset::Covariance(d) => {
            let p = d.p;
            check_lengths(d.times.len(), d.matrices.len())?;
            let obs = d
                .matrices
                .iter()
                .map(|s| Observations::Scatter {
                    matrices: vec![ScatterObs { scatter: s * config.scatter_dof, count: config.scatter_dof }],
                })
                .collect();
            (
                d.times.iter().map(|&t| vec![t]).collect(),
                obs,
                EFParams::InverseWishart { nu: p as f64 - 1.0 + eps, psi: DMatrix::identity(p, p) * eps },
                half_vec_dim(p),
                p,
            )
        }
    };
    Ok(Problem { family: config.family, basis: config.basis, latent_dim, dim, inputs, obs, prior })
}

fn check_lengths(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::DimensionMismatch(format!("{a} inputs but {b} observations")));
    }
    Ok(())
}

fn merge_observations(a: &Observations, b: &Observations) -> Result<Observations> {
    Ok(match (a, b) {
        (Observations::Bernoulli { labels: x }, Observations::Bernoulli { labels: y }) => {
            Observations::Bernoulli { labels: x.iter().chain(y).copied().collect() }
        }
        (Observations::Poisson { counts: x }, Observations::Poisson { counts: y }) => {
            Observations::Poisson { counts: x.iter().chain(y).copied().collect() }
        }
        (Observations::Categorical { counts: x }, Observations::Categorical { counts: y }) if x.len() == y.len() => {
            Observations::Categorical { counts: x.iter().zip(y).map(|(u, v)| u + v).collect() }
        }
        (Observations::Scatter { matrices: x }, Observations::Scatter { matrices: y }) => {
            Observations::Scatter { matrices: x.iter().chain(y).cloned().collect() }
        }
        _ => return Err(Error::DimensionMismatch("cannot merge observation batches of different kinds".into())),
    })
}

/// Applies the optional k-means grouping.
fn grouped(problem: &Problem, inducing: Option<usize>, seed: u64) -> Result<(Vec<Vec<f64>>, Vec<Observations>)> {
    match inducing {
        None => Ok((problem.inputs.clone(), problem.obs.clone())),
        Some(k) => {
            let km = kmeans(&problem.inputs, k, seed)?;
            let mut obs: Vec<Option<Observations>> = vec![None; k];
            for (o, &c) in problem.obs.iter().zip(&km.assignment) {
                obs[c] = Some(match &obs[c] {
                    None => o.clone(),
                    Some(prev) => merge_observations(prev, o)?,
                });
            }
            Ok((km.centers, obs.into_iter().map(|o| o.expect("k-means clusters are non-empty")).collect()))
        }
    }
}

/// Per-group pseudo-likelihood parameters `θ_i = prior + data_i`.
pub fn pseudo_likelihoods(data: &Dataset, config: &LMGPConfig) -> Result<(Vec<Vec<f64>>, Vec<EFParams>)> {
    let problem = build_problem(data, config)?;
    let (inputs, obs) = grouped(&problem, config.inducing, config.seed)?;
    let params = obs.iter().map(|o| conjugate_update(&problem.prior, o)).collect::<Result<Vec<_>>>()?;
    Ok((inputs, params))
}

/// The isolated LM step: forward bridge for every parameter set.
pub fn bridge_all(params: &[EFParams], spec: BridgeSpec) -> Result<Vec<GaussianApprox>> {
    params.iter().map(|p| lm_forward(p, spec)).collect()
}

/// `(mean, cov)` on the GP's latent coordinates.
fn to_latent(g: &GaussianApprox) -> Result<(DVector<f64>, DMatrix<f64>)> {
    match g.domain {
        LatentDomain::SymmetricMatrix { .. } => {
            let h = g.to_half_vec()?;
            Ok((h.mean.clone(), h.cov_dense()))
        }
        _ => Ok((g.mean.clone(), g.cov_dense())),
    }
}

/// Inverse of [`to_latent`], producing the representation the inverse
/// bridges consume.
fn from_latent(family: Family, dim: usize, mean: &DVector<f64>, cov: &DMatrix<f64>) -> GaussianApprox {
    match family {
        Family::Dirichlet => GaussianApprox {
            mean: mean.clone(),
            cov: Covariance::Dense(cov.clone()),
            domain: LatentDomain::SimplexLatent { k: dim },
        },
        Family::Wishart | Family::InverseWishart => {
            let d = duplication(dim);
            GaussianApprox {
                mean: vec_rm(&unvech(mean.as_slice(), dim)),
                cov: Covariance::Dense(&d * cov * d.transpose()),
                domain: LatentDomain::SymmetricMatrix { p: dim },
            }
        }
        _ => GaussianApprox::scalar(mean[0], cov[(0, 0)]),
    }
}

fn expand(group: &[f64], latent_dim: usize) -> Vec<Vec<f64>> {
    if latent_dim == 1 {
        return vec![group.to_vec()];
    }
    (0..latent_dim)
        .map(|l| {
            let mut v = group.to_vec();
            v.push(l as f64);
            v
        })
        .collect()
}

fn sample_variance(v: &DVector<f64>) -> f64 {
    let n = v.len();
    if n < 2 {
        return 1.0;
    }
    let m = v.mean();
    (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1) as f64).max(1e-6)
}

/// Data-driven default kernel for a problem.
fn default_kernel(problem: &Problem, inputs: &[Vec<f64>], targets: &DVector<f64>) -> Kernel {
    let var = sample_variance(targets);
    match problem.family {
        Family::Beta => Kernel::rbf(median_distance(inputs), var),
        Family::Gamma => {
            let mean_sq =
                inputs.iter().map(|x| x.iter().map(|v| v * v).sum::<f64>()).sum::<f64>() / inputs.len().max(1) as f64;
            Kernel::Sum {
                kernels: vec![
                    Kernel::RationalQuadratic { lengthscale: median_distance(inputs), alpha: 1.0, variance: var },
                    Kernel::Linear { variance: 1e-3 * var / mean_sq.max(1e-12), offset: 0.0 },
                ],
            }
        }
        Family::Dirichlet => {
            let times: Vec<Vec<f64>> = inputs.iter().map(|x| vec![x[0]]).collect();
            let regions = inputs.iter().map(|x| x[1] as usize + 1).max().unwrap_or(1);
            Kernel::Product {
                kernels: vec![
                    Kernel::active(vec![0], Kernel::rbf(median_distance(&times), var)),
                    Kernel::active(vec![1], Kernel::identity_plus_uniform(regions, 1.0, 0.5)),
                    Kernel::active(vec![2], Kernel::identity_plus_uniform(problem.latent_dim, 1.0, 0.1)),
                ],
            }
        }
        _ => {
            let times: Vec<Vec<f64>> = inputs.iter().map(|x| vec![x[0]]).collect();
            Kernel::Product {
                kernels: vec![
                    Kernel::active(vec![0], Kernel::rbf(median_distance(&times), var)),
                    Kernel::active(vec![1], Kernel::identity_plus_uniform(problem.latent_dim, 1.0, 0.0)),
                ],
            }
        }
    }
}

/// Fits the GP to per-group latent Gaussians.
fn fit_latent(
    problem: &Problem,
    config: &LMGPConfig,
    group_inputs: &[Vec<f64>],
    latents: &[(DVector<f64>, DMatrix<f64>)],
) -> Result<GPModel> {
    let l = problem.latent_dim;
    let inputs: Vec<Vec<f64>> = group_inputs.iter().flat_map(|g| expand(g, l)).collect();
    let targets = DVector::from_iterator(inputs.len(), latents.iter().flat_map(|(m, _)| m.iter().copied()));
    let noise = if l == 1 {
        Noise::Diagonal(DVector::from_iterator(latents.len(), latents.iter().map(|(_, c)| c[(0, 0)])))
    } else {
        Noise::BlockDiagonal(latents.iter().map(|(_, c)| c.clone()).collect())
    };
    let kernel = match &config.kernel {
        Some(k) => k.clone(),
        None if !inputs.is_empty() => default_kernel(problem, group_inputs, &targets),
        None => return Err(Error::EmptyDataset),
    };
    gp_fit(&kernel, &inputs, &targets, &noise, &config.prior_mean)
}

/// Maps one latent draw for a query to the data domain.
fn back_transform(family: Family, basis: Basis, dim: usize, y: &[f64]) -> Vec<f64> {
    match (family, basis) {
        (Family::Dirichlet, _) => softmax(y),
        (Family::Wishart | Family::InverseWishart, b) => {
            let m = unvech(y, dim);
            let (vals, vecs) = sym_eigen(&m);
            let out = if b == Basis::MatrixLog { matrixops::from_eigen(&vals, &vecs, f64::exp) } else { &m * &m };
            vec_rm(&matrixops::symmetrize(&out)).iter().copied().collect()
        }
        (_, Basis::Log) => vec![y[0].exp()],
        (_, Basis::Sqrt) => vec![y[0] * y[0]],
        (_, Basis::Logit) => vec![1.0 / (1.0 + (-y[0]).exp())],
        _ => y.to_vec(),
    }
}

fn in_support(family: Family, dim: usize, x: &[f64]) -> bool {
    match family {
        Family::Beta => x[0] >= 0.0 && x[0] <= 1.0,
        Family::Dirichlet => x.iter().all(|v| *v >= 0.0) && (x.iter().sum::<f64>() - 1.0).abs() < 1e-9,
        Family::Wishart | Family::InverseWishart => {
            let m = matrixops::unvec_rm(x, dim);
            let (vals, _) = sym_eigen(&m);
            vals.min() >= -1e-10 * m.trace().abs()
        }
        _ => x.iter().all(|v| *v > 0.0 && v.is_finite()),
    }
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = q * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

fn summarize(draws: &[Vec<f64>]) -> PointSummary {
    let d = draws[0].len();
    let n = draws.len() as f64;
    let mut s = PointSummary { mean: vec![], std: vec![], q05: vec![], q50: vec![], q95: vec![] };
    for j in 0..d {
        let mut col: Vec<f64> = draws.iter().map(|x| x[j]).collect();
        let mean = col.iter().sum::<f64>() / n;
        let var =
            if draws.len() > 1 { col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0) } else { 0.0 };
        col.sort_by(f64::total_cmp);
        s.mean.push(mean);
        s.std.push(var.sqrt());
        s.q05.push(quantile(&col, 0.05));
        s.q50.push(quantile(&col, 0.5));
        s.q95.push(quantile(&col, 0.95));
    }
    s
}

fn predict(problem: &Problem, config: &LMGPConfig, model: &GPModel, queries: &[Vec<f64>]) -> Result<Prediction> {
    let l = problem.latent_dim;
    let expanded: Vec<Vec<f64>> = queries.iter().flat_map(|q| expand(q, l)).collect();
    let pred = gp_predict(model, &expanded, true)?;
    let cov = pred.cov.expect("covariance requested");
    let draws = if expanded.is_empty() {
        vec![]
    } else {
        gp_sample(model, &expanded, derive_seed(config.seed, 1), config.n_samples)?
    };
    let mut out = Prediction {
        inputs: queries.to_vec(),
        latent_mean: vec![],
        latent_cov: vec![],
        summary: vec![],
        params: vec![],
        support_violations: 0,
        n_samples: config.n_samples,
        samples: config.keep_samples.then(Vec::new),
    };
    let opts = InverseOptions { structured_sqrtm: true };
    for q in 0..queries.len() {
        let o = q * l;
        let mean = pred.mean.rows(o, l).into_owned();
        let block = cov.view((o, o), (l, l)).into_owned();
        out.latent_mean.push(mean.iter().copied().collect());
        out.latent_cov.push((0..l).map(|i| block.row(i).iter().copied().collect()).collect());
        let g = from_latent(problem.family, problem.dim, &mean, &block);
        out.params.push(lm_inverse_with(&g, problem.family, problem.basis, opts).ok());
        let data: Vec<Vec<f64>> = draws
            .iter()
            .map(|d| back_transform(problem.family, problem.basis, problem.dim, &d.as_slice()[o..o + l]))
            .collect();
        out.support_violations += data.iter().filter(|x| !in_support(problem.family, problem.dim, x)).count();
        out.summary.push(summarize(&data));
        if let Some(s) = out.samples.as_mut() {
            s.push(data);
        }
    }
    Ok(out)
}

/// LM+GP with pseudo-likelihoods built from the data.
pub fn lmgp_v1(data: &Dataset, queries: &[Vec<f64>], config: &LMGPConfig) -> Result<(GPModel, Prediction)> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let problem = build_problem(data, config)?;
    let (inputs, obs) = grouped(&problem, config.inducing, config.seed)?;
    let spec = BridgeSpec::new(problem.family, problem.basis)?;
    let latents = obs
        .iter()
        .map(|o| conjugate_update(&problem.prior, o).and_then(|p| lm_forward(&p, spec)).and_then(|g| to_latent(&g)))
        .collect::<Result<Vec<_>>>()?;
    let model = fit_latent(&problem, config, &inputs, &latents)?;
    let pred = predict(&problem, config, &model, queries)?;
    Ok((model, pred))
}

/// The flat prior GP whose marginals are the bridge image of the
/// pseudo-count prior (scalar families).
pub fn flat_prior_gp(config: &LMGPConfig) -> Result<PriorGp> {
    let prior = match config.family {
        Family::Beta => EFParams::Beta { alpha: config.eps, beta: config.eps },
        Family::Gamma => EFParams::Gamma { alpha: config.eps, lambda: config.eps },
        f => return Err(Error::InvalidParams(format!("no default prior GP for {f}; set prior_gp"))),
    };
    let g = lm_forward(&prior, BridgeSpec::new(config.family, config.basis)?)?;
    Ok(PriorGp { kernel: Kernel::rbf(1.0, g.cov.diagonal()[0]), mean: PriorMean::Constant { value: g.mean[0] } })
}

/// LM+GP starting from a latent prior GP: prior marginals are mapped to
/// the exponential family, updated with the data and mapped back.
pub fn lmgp_v2(data: &Dataset, queries: &[Vec<f64>], config: &LMGPConfig) -> Result<(GPModel, Prediction)> {
    let problem = build_problem(data, config)?;
    let prior_gp = match &config.prior_gp {
        Some(p) => p.clone(),
        None => flat_prior_gp(config)?,
    };
    let (inputs, obs) =
        if data.is_empty() { (vec![], vec![]) } else { grouped(&problem, config.inducing, config.seed)? };
    if inputs.is_empty() {
        let model =
            gp_fit(&prior_gp.kernel, &[], &DVector::zeros(0), &Noise::Diagonal(DVector::zeros(0)), &prior_gp.mean)?;
        let pred = predict(&problem, config, &model, queries)?;
        return Ok((model, pred));
    }
    let l = problem.latent_dim;
    let expanded: Vec<Vec<f64>> = inputs.iter().flat_map(|g| expand(g, l)).collect();
    let empty = gp_fit(&prior_gp.kernel, &[], &DVector::zeros(0), &Noise::Diagonal(DVector::zeros(0)), &prior_gp.mean)?;
    let marg = gp_predict(&empty, &expanded, true)?;
    let cov = marg.cov.expect("covariance requested");
    let spec = BridgeSpec::new(problem.family, problem.basis)?;
    let opts = InverseOptions { structured_sqrtm: true };
    let mut latents = Vec::with_capacity(inputs.len());
    for (i, o) in obs.iter().enumerate() {
        let mean = marg.mean.rows(i * l, l).into_owned();
        let block = cov.view((i * l, i * l), (l, l)).into_owned();
        let theta0 = lm_inverse_with(
            &from_latent(problem.family, problem.dim, &mean, &block),
            problem.family,
            problem.basis,
            opts,
        )?;
        let post = conjugate_update(&theta0, o)?;
        latents.push(to_latent(&lm_forward(&post, spec)?)?);
    }
    let model = fit_latent(&problem, config, &inputs, &latents)?;
    let pred = predict(&problem, config, &model, queries)?;
    Ok((model, pred))
}

/// Dispatches on `config.version`.
pub fn lmgp(data: &Dataset, queries: &[Vec<f64>], config: &LMGPConfig) -> Result<(GPModel, Prediction)> {
    match config.version {
        Version::V1 => lmgp_v1(data, queries, config),
        Version::V2 => lmgp_v2(data, queries, config),
    }
}

/// Marginal `Beta(α_i, Σ_{j≠i} α_j)` of a Dirichlet component.
pub fn dirichlet_beta_marginals(alpha: &[f64], component: usize) -> Result<EFParams> {
    EFParams::Dirichlet { alpha: alpha.to_vec() }.validate()?;
    if component >= alpha.len() {
        return Err(Error::IndexOutOfRange { index: component, len: alpha.len() });
    }
    let rest: f64 = alpha.iter().enumerate().filter(|(j, _)| *j != component).map(|(_, a)| a).sum();
    Ok(EFParams::Beta { alpha: alpha[component], beta: rest })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassificationMetrics {
    pub accuracy: f64,
    pub mnll: f64,
    pub ece: f64,
}

/// Accuracy, mean negative log-likelihood and 10-bin expected calibration
/// error. Argmax ties go to the lowest index.
pub fn classification_metrics(probabilities: &[Vec<f64>], labels: &[usize]) -> Result<ClassificationMetrics> {
    if probabilities.len() != labels.len() {
        return Err(Error::DimensionMismatch("one probability vector per label".into()));
    }
    if probabilities.is_empty() {
        return Err(Error::EmptyDataset);
    }
    const BINS: usize = 10;
    let mut bin_n = [0usize; BINS];
    let mut bin_conf = [0.0; BINS];
    let mut bin_acc = [0.0; BINS];
    let (mut correct, mut nll) = (0usize, 0.0);
    for (p, &y) in probabilities.iter().zip(labels) {
        if y >= p.len() {
            return Err(Error::IndexOutOfRange { index: y, len: p.len() });
        }
        if p.iter().any(|v| !(*v >= -1e-12) || *v > 1.0 + 1e-12) || (p.iter().sum::<f64>() - 1.0).abs() > 1e-6 {
            return Err(Error::DimensionMismatch("probabilities must lie in the simplex".into()));
        }
        let mut arg = 0;
        for (j, v) in p.iter().enumerate() {
            if *v > p[arg] {
                arg = j;
            }
        }
        let hit = arg == y;
        correct += hit as usize;
        nll -= p[y].max(f64::MIN_POSITIVE).ln();
        let conf = p[arg];
        let b = ((conf * BINS as f64) as usize).min(BINS - 1);
        bin_n[b] += 1;
        bin_conf[b] += conf;
        bin_acc[b] += hit as u8 as f64;
    }
    let n = labels.len() as f64;
    let ece = (0..BINS)
        .filter(|&b| bin_n[b] > 0)
        .map(|b| {
            let nb = bin_n[b] as f64;
            nb / n * (bin_acc[b] / nb - bin_conf[b] / nb).abs()
        })
        .sum();
    Ok(ClassificationMetrics { accuracy: correct as f64 / n, mnll: nll / n, ece })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CountMetrics {
    pub rmse: f64,
    pub mnll: f64,
    pub in2std: f64,
}

/// RMSE, Poisson mean negative log-likelihood and the fraction of targets
/// within two predictive standard deviations.
pub fn count_metrics(rates: &[f64], variances: &[f64], targets: &[u64]) -> Result<CountMetrics> {
    if rates.len() != targets.len() || variances.len() != targets.len() {
        return Err(Error::DimensionMismatch("rates, variances and targets must align".into()));
    }
    if targets.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if let Some(&r) = rates.iter().find(|r| !(**r > 0.0)) {
        return Err(Error::NegativeRate(r));
    }
    let n = targets.len() as f64;
    let (mut se, mut nll, mut inside) = (0.0, 0.0, 0usize);
    for ((&r, &v), &y) in rates.iter().zip(variances).zip(targets) {
        let y = y as f64;
        se += (r - y) * (r - y);
        nll -= y * r.ln() - r - ln_gamma(y + 1.0);
        inside += ((y - r).abs() <= 2.0 * v.max(0.0).sqrt()) as usize;
    }
    Ok(CountMetrics { rmse: (se / n).sqrt(), mnll: nll / n, in2std: inside as f64 / n })
}

/// Re-exported for callers that build custom kernels.
pub use gp::Kernel as GpKernel;
