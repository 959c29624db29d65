//! Command-line front end.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Binomial, Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::bridges::{
    lm_forward, standard_laplace, BridgeSpec, Covariance, GaussianApprox, InverseOptions, LatentDomain,
};
use crate::diagnostics::{
    default_bases, default_grid, default_inverse, distance_sweep, oracle_check, DistanceReport, OracleRow,
    OracleStatus, SweepOptions,
};
use crate::distributions::{derive_seed, rng_from_seed, EFParams, Family, Sampler};
use crate::error::{Error, Result};
use crate::gp::{Kernel, PriorMean};
use crate::matrixops::{is_positive_definite, is_symmetric};
use crate::pipeline::{
    bridge_all, classification_metrics, count_metrics, lmgp, pseudo_likelihoods, BinaryData, CategoricalData,
    CategoricalGroup, CountData, CovarianceData, Dataset, LMGPConfig, Prediction, PriorGp, Version,
};
use crate::transforms::{softmax, Basis};

/// Environment variable that overrides the default seed.
pub const SEED_ENV: &str = "LAPMATCH_SEED";

#[derive(Debug, Parser)]
#[command(name = "lapmatch", version, about = "Laplace Matching bridges, LM+GP experiments and distance diagnostics")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Convert between exponential-family parameters and Gaussians.
    Bridge(BridgeArgs),
    /// Run an LM+GP experiment on a dataset and write a report.
    Experiment(ExperimentArgs),
    /// KL/MMD sweep over a parameter grid.
    Distances(DistancesArgs),
    /// Compare closed-form bridges with the numeric Laplace approximation.
    OracleCheck(OracleArgs),
    /// Write a synthetic dataset.
    Gen(GenArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BridgeDirection {
    Forward,
    Inverse,
}

fn parse_family(s: &str) -> std::result::Result<Family, String> {
    Family::parse(s).ok_or_else(|| format!("unknown family '{s}'"))
}

fn parse_basis(s: &str) -> std::result::Result<Basis, String> {
    Basis::parse(s).ok_or_else(|| format!("unknown basis '{s}'"))
}

#[derive(Debug, Args)]
pub struct BridgeArgs {
    #[arg(value_parser = parse_family)]
    pub family: Family,
    #[arg(value_parser = parse_basis)]
    pub basis: Basis,
    #[arg(value_enum)]
    pub direction: BridgeDirection,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub k: Option<f64>,
    /// Wishart degrees of freedom.
    #[arg(long)]
    pub n: Option<f64>,
    /// Inverse-Wishart degrees of freedom.
    #[arg(long)]
    pub nu: Option<f64>,
    /// Dirichlet concentrations, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub concentration: Vec<f64>,
    /// Scale matrix, rows separated by ';' and entries by ','.
    #[arg(long)]
    pub scale: Option<String>,
    /// Gaussian mean: a scalar, a comma list, or a matrix.
    #[arg(long, allow_hyphen_values = true)]
    pub mu: Option<String>,
    #[arg(long)]
    pub sigma2: Option<f64>,
    /// Dense covariance matrix.
    #[arg(long, allow_hyphen_values = true)]
    pub cov: Option<String>,
    /// Covariance `c·I` for matrix families.
    #[arg(long)]
    pub scaled_identity: Option<f64>,
    /// A full Gaussian record as JSON.
    #[arg(long)]
    pub gaussian: Option<String>,
    /// Invert matrix-sqrt bridges assuming the forward covariance structure.
    #[arg(long)]
    pub structured: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum DataKind {
    Binary,
    Counts,
    Categorical,
    Covariance,
}

impl DataKind {
    pub fn family(self) -> Family {
        match self {
            DataKind::Binary => Family::Beta,
            DataKind::Counts => Family::Gamma,
            DataKind::Categorical => Family::Dirichlet,
            DataKind::Covariance => Family::InverseWishart,
        }
    }

    pub fn default_basis(self) -> Basis {
        match self {
            DataKind::Binary => Basis::Logit,
            DataKind::Counts => Basis::Log,
            DataKind::Categorical => Basis::SoftmaxInverse,
            DataKind::Covariance => Basis::MatrixLog,
        }
    }
}

fn default_eps() -> f64 {
    0.01
}
fn default_samples() -> usize {
    1000
}
fn default_one() -> f64 {
    1.0
}
fn default_dof() -> f64 {
    20.0
}

/// Experiment record, accepted as a JSON file via `--config`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub kind: DataKind,
    pub data: PathBuf,
    #[serde(default)]
    pub test_data: Option<PathBuf>,
    #[serde(default)]
    pub basis: Option<Basis>,
    #[serde(default)]
    pub kernel: Option<Kernel>,
    #[serde(default)]
    pub prior_mean: PriorMean,
    #[serde(default = "default_eps")]
    pub eps: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub inducing: Option<usize>,
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default = "default_samples")]
    pub n_samples: usize,
    #[serde(default)]
    pub version: Version,
    #[serde(default = "default_one")]
    pub dirichlet_prior: f64,
    #[serde(default = "default_dof")]
    pub scatter_dof: f64,
    #[serde(default)]
    pub prior_gp: Option<PriorGp>,
}

impl ExperimentConfig {
    pub fn lmgp_config(&self) -> LMGPConfig {
        LMGPConfig {
            family: self.kind.family(),
            basis: self.basis.unwrap_or(self.kind.default_basis()),
            kernel: self.kernel.clone(),
            prior_mean: self.prior_mean.clone(),
            eps: self.eps,
            inducing: self.inducing,
            seed: self.seed,
            version: self.version,
            dirichlet_prior: self.dirichlet_prior,
            n_samples: self.n_samples,
            scatter_dof: self.scatter_dof,
            keep_samples: false,
            prior_gp: self.prior_gp.clone(),
        }
    }
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    /// JSON experiment record; flags given alongside it override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub kind: Option<DataKind>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub test_data: Option<PathBuf>,
    #[arg(long, value_parser = parse_basis)]
    pub basis: Option<Basis>,
    #[arg(long)]
    pub eps: Option<f64>,
    #[arg(long, env = SEED_ENV)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub inducing: Option<usize>,
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub v2: bool,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DistancesArgs {
    #[arg(long, value_parser = parse_family)]
    pub family: Family,
    /// Bases to compare (default: identity plus the family's transformed bases).
    #[arg(long, value_delimiter = ',', value_parser = parse_basis)]
    pub bases: Vec<Basis>,
    /// JSON list of parameter records replacing the default grid.
    #[arg(long)]
    pub grid: Option<PathBuf>,
    /// KL draws per entry (default 10⁶ scalar, 10⁵ otherwise).
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long, default_value_t = 1000)]
    pub mmd_samples: usize,
    #[arg(long, env = SEED_ENV, default_value_t = 0)]
    pub seed: u64,
    /// Output directory for report.json, rows.csv and long.csv.
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct OracleArgs {
    /// Families to check, comma separated (default: all; empty string: none).
    #[arg(long)]
    pub families: Option<String>,
    /// Bases to check, comma separated (default: all compatible, including identity).
    #[arg(long)]
    pub bases: Option<String>,
    /// JSON list of parameter records replacing the default grids.
    #[arg(long)]
    pub grid: Option<PathBuf>,
    /// Replace the Gamma sqrt-basis inverse by an incorrect variant
    /// (`α = μ²/(4σ²) − ½`, `λ = 4/σ²`) to show that the check catches it.
    #[arg(long)]
    pub faulty_gamma_sqrt_inverse: bool,
    /// Also write the table as JSON.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum GenKind {
    Binary,
    Counts,
    Categorical,
    Covariance,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(value_enum)]
    pub kind: GenKind,
    /// Points (binary, counts) or time steps (categorical, covariance).
    #[arg(long, default_value_t = 40)]
    pub n: usize,
    #[arg(long, env = SEED_ENV, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub output: PathBuf,
}

/// Parses arguments, runs the command and returns the process exit code:
/// 0 success, 1 check failure, 2 usage or data error.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}

pub fn run(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Bridge(a) => cmd_bridge(&a).map(|v| {
            println!("{}", serde_json::to_string_pretty(&v).expect("serializable"));
            0
        }),
        Command::Experiment(a) => {
            let report = cmd_experiment(&a)?;
            if report.get("output").is_none() {
                println!("{}", serde_json::to_string_pretty(&report).expect("serializable"));
            }
            Ok(0)
        }
        Command::Distances(a) => cmd_distances(&a).map(|_| 0),
        Command::OracleCheck(a) => {
            let rows = cmd_oracle_check(&a)?;
            print!("{}", oracle_table(&rows));
            Ok(if rows.iter().any(|r| r.status == OracleStatus::Fail) { 1 } else { 0 })
        }
        Command::Gen(a) => cmd_gen(&a).map(|_| 0),
    }
}

fn required(v: Option<f64>, flag: &str, family: Family) -> Result<f64> {
    v.ok_or_else(|| Error::Data(format!("--{flag} is required for {family}")))
}

/// Parses `"a,b;c,d"` into a row-major matrix.
pub fn parse_matrix(s: &str) -> Result<DMatrix<f64>> {
    let rows: Vec<Vec<f64>> = s
        .split(';')
        .map(|r| r.split(',').map(|v| v.trim().parse::<f64>()).collect::<std::result::Result<Vec<_>, _>>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::Data(format!("bad matrix '{s}': {e}")))?;
    let c = rows.first().map_or(0, |r| r.len());
    if rows.iter().any(|r| r.len() != c) || c == 0 {
        return Err(Error::Data(format!("matrix '{s}' has ragged rows")));
    }
    Ok(DMatrix::from_fn(rows.len(), c, |i, j| rows[i][j]))
}

fn forward_params(a: &BridgeArgs) -> Result<EFParams> {
    let f = a.family;
    let scale = || -> Result<DMatrix<f64>> {
        parse_matrix(a.scale.as_deref().ok_or_else(|| Error::Data(format!("--scale is required for {f}")))?)
    };
    let p = match f {
        Family::Exponential => EFParams::Exponential { lambda: required(a.lambda, "lambda", f)? },
        Family::Gamma => {
            EFParams::Gamma { alpha: required(a.alpha, "alpha", f)?, lambda: required(a.lambda, "lambda", f)? }
        }
        Family::InverseGamma => {
            EFParams::InverseGamma { alpha: required(a.alpha, "alpha", f)?, lambda: required(a.lambda, "lambda", f)? }
        }
        Family::ChiSquared => EFParams::ChiSquared { k: required(a.k, "k", f)? },
        Family::Beta => EFParams::Beta { alpha: required(a.alpha, "alpha", f)?, beta: required(a.beta, "beta", f)? },
        Family::Dirichlet => {
            if a.concentration.is_empty() {
                return Err(Error::Data("--concentration is required for dirichlet".into()));
            }
            EFParams::Dirichlet { alpha: a.concentration.clone() }
        }
        Family::Wishart => EFParams::Wishart { n: required(a.n, "n", f)?, v: scale()? },
        Family::InverseWishart => EFParams::InverseWishart { nu: required(a.nu, "nu", f)?, psi: scale()? },
    };
    p.validate()?;
    Ok(p)
}

fn inverse_gaussian(a: &BridgeArgs) -> Result<GaussianApprox> {
    if let Some(j) = &a.gaussian {
        let g: GaussianApprox =
            serde_json::from_str(j).map_err(|e| Error::Data(format!("bad --gaussian record: {e}")))?;
        return Ok(g);
    }
    let mu = a.mu.as_deref().ok_or_else(|| Error::Data("--mu is required for the inverse direction".into()))?;
    let m = parse_matrix(mu)?;
    match a.family {
        f if f.is_scalar() => {
            let s2 = required(a.sigma2, "sigma2", f)?;
            Ok(GaussianApprox::scalar(m[(0, 0)], s2))
        }
        Family::Dirichlet => {
            let mean = DVector::from_iterator(m.len(), m.iter().copied());
            let k = mean.len();
            let cov =
                parse_matrix(a.cov.as_deref().ok_or_else(|| Error::Data("--cov is required for dirichlet".into()))?)?;
            Ok(GaussianApprox { mean, cov: Covariance::Dense(cov), domain: LatentDomain::SimplexLatent { k } })
        }
        _ => {
            let p = m.nrows();
            if m.ncols() != p {
                return Err(Error::Data("--mu must be a square matrix".into()));
            }
            let cov = match (a.scaled_identity, &a.cov) {
                (Some(c), _) => Covariance::ScaledIdentity { c, n: p * p },
                (None, Some(c)) => Covariance::Dense(parse_matrix(c)?),
                (None, None) => return Err(Error::Data("--cov or --scaled-identity is required".into())),
            };
            Ok(GaussianApprox { mean: crate::matrixops::vec_rm(&m), cov, domain: LatentDomain::SymmetricMatrix { p } })
        }
    }
}

pub fn cmd_bridge(a: &BridgeArgs) -> Result<Value> {
    match a.direction {
        BridgeDirection::Forward => {
            let params = forward_params(a)?;
            let g = if a.basis == Basis::Identity {
                standard_laplace(&params)?
            } else {
                lm_forward(&params, BridgeSpec::new(a.family, a.basis)?)?
            };
            Ok(serde_json::to_value(&g).expect("serializable"))
        }
        BridgeDirection::Inverse => {
            let g = inverse_gaussian(a)?;
            let opts = InverseOptions { structured_sqrtm: a.structured };
            let p = crate::bridges::lm_inverse_with(&g, a.family, a.basis, opts)?;
            Ok(serde_json::to_value(&p).expect("serializable"))
        }
    }
}

/// Writes `bytes` to `path` through a temporary file in the same directory.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.to_string()))?;
    Ok(())
}

fn csv_writer() -> csv::Writer<Vec<u8>> {
    csv::WriterBuilder::new().from_writer(Vec::new())
}

fn finish_csv(w: csv::Writer<Vec<u8>>) -> Result<Vec<u8>> {
    w.into_inner().map_err(|e| Error::Io(e.to_string()))
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(e.to_string())
}

/// Reads a headed CSV file into `(line, fields)` records.
/// Header and `(line, fields)` records.
type Records = (Vec<String>, Vec<(u64, Vec<String>)>);

fn read_records(path: &Path) -> Result<Records> {
    let mut r = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    let header: Vec<String> =
        r.headers().map_err(|e| Error::Data(format!("{}: {e}", path.display())))?.iter().map(String::from).collect();
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        let line = rec.position().map_or(0, |p| p.line());
        out.push((line, rec.iter().map(String::from).collect()));
    }
    Ok((header, out))
}

fn field<T: std::str::FromStr>(path: &Path, line: u64, name: &str, v: &str) -> Result<T> {
    v.parse::<T>().map_err(|_| Error::Data(format!("{} line {line}: bad {name} '{v}'", path.display())))
}

fn features(path: &Path, line: u64, header: &[String], rec: &[String]) -> Result<Vec<f64>> {
    rec[..rec.len() - 1]
        .iter()
        .zip(header)
        .map(|(v, h)| {
            let x: f64 = field(path, line, h, v)?;
            if !x.is_finite() {
                return Err(Error::Data(format!("{} line {line}: non-finite {h}", path.display())));
            }
            Ok(x)
        })
        .collect()
}

/// `x1,…,xd,label` with labels 0/1.
pub fn read_binary(path: &Path) -> Result<BinaryData> {
    let (header, recs) = read_records(path)?;
    if header.len() < 2 {
        return Err(Error::Data(format!("{}: expected x1,…,xd,label", path.display())));
    }
    let mut d = BinaryData { x: vec![], labels: vec![] };
    for (line, rec) in recs {
        d.x.push(features(path, line, &header, &rec)?);
        let label = match rec[rec.len() - 1].as_str() {
            "0" | "false" => false,
            "1" | "true" => true,
            v => return Err(Error::Data(format!("{} line {line}: label must be 0 or 1, got '{v}'", path.display()))),
        };
        d.labels.push(label);
    }
    Ok(d)
}

/// `x1,…,xd,count` with non-negative integer counts.
pub fn read_counts(path: &Path) -> Result<CountData> {
    let (header, recs) = read_records(path)?;
    if header.len() < 2 {
        return Err(Error::Data(format!("{}: expected x1,…,xd,count", path.display())));
    }
    let mut d = CountData { x: vec![], counts: vec![] };
    for (line, rec) in recs {
        d.x.push(features(path, line, &header, &rec)?);
        let v = &rec[rec.len() - 1];
        let c: u64 = v.parse().map_err(|_| {
            Error::Data(format!("{} line {line}: count must be a non-negative integer, got '{v}'", path.display()))
        })?;
        d.counts.push(c);
    }
    Ok(d)
}

/// `t,c,class,count`; groups are sorted by `(t, c)`.
pub fn read_categorical(path: &Path) -> Result<CategoricalData> {
    let (header, recs) = read_records(path)?;
    if header.len() != 4 {
        return Err(Error::Data(format!("{}: expected t,c,class,count", path.display())));
    }
    let mut cells: BTreeMap<(u64, usize), BTreeMap<usize, u64>> = BTreeMap::new();
    let mut times: BTreeMap<u64, f64> = BTreeMap::new();
    let (mut classes, mut regions) = (0, 0);
    for (line, rec) in recs {
        let t: f64 = field(path, line, "t", &rec[0])?;
        if !t.is_finite() {
            return Err(Error::Data(format!("{} line {line}: non-finite t", path.display())));
        }
        let c: usize = field(path, line, "c", &rec[1])?;
        let k: usize = field(path, line, "class", &rec[2])?;
        let n: u64 = field(path, line, "count", &rec[3])?;
        let key = if t == 0.0 { 0.0f64.to_bits() } else { t.to_bits() };
        times.insert(key, t);
        if cells.entry((key, c)).or_default().insert(k, n).is_some() {
            return Err(Error::Data(format!("{} line {line}: duplicate (t, c, class) entry", path.display())));
        }
        classes = classes.max(k + 1);
        regions = regions.max(c + 1);
    }
    let mut groups: Vec<CategoricalGroup> = cells
        .into_iter()
        .map(|((key, c), m)| CategoricalGroup {
            t: times[&key],
            c,
            counts: (0..classes).map(|k| m.get(&k).copied().unwrap_or(0)).collect(),
        })
        .collect();
    groups.sort_by(|a, b| a.t.total_cmp(&b.t).then(a.c.cmp(&b.c)));
    Ok(CategoricalData { classes, regions, groups })
}

/// `t,i,j,value` with every entry of every symmetric matrix present.
pub fn read_covariance(path: &Path) -> Result<CovarianceData> {
    let (header, recs) = read_records(path)?;
    if header.len() != 4 {
        return Err(Error::Data(format!("{}: expected t,i,j,value", path.display())));
    }
    type Entries = BTreeMap<(usize, usize), f64>;
    let mut entries: Vec<(f64, Entries)> = Vec::new();
    let mut p = 0;
    for (line, rec) in recs {
        let t: f64 = field(path, line, "t", &rec[0])?;
        let i: usize = field(path, line, "i", &rec[1])?;
        let j: usize = field(path, line, "j", &rec[2])?;
        let v: f64 = field(path, line, "value", &rec[3])?;
        if !t.is_finite() || !v.is_finite() {
            return Err(Error::Data(format!("{} line {line}: non-finite value", path.display())));
        }
        p = p.max(i + 1).max(j + 1);
        let slot = match entries.iter_mut().find(|(s, _)| *s == t) {
            Some(s) => s,
            None => {
                entries.push((t, BTreeMap::new()));
                entries.last_mut().expect("just pushed")
            }
        };
        if slot.1.insert((i, j), v).is_some() {
            return Err(Error::Data(format!("{} line {line}: duplicate entry ({i}, {j}) at t = {t}", path.display())));
        }
    }
    entries.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut d = CovarianceData { p, times: vec![], matrices: vec![] };
    for (t, m) in entries {
        if m.len() != p * p {
            return Err(Error::Data(format!(
                "{}: matrix at t = {t} has {} of {} entries",
                path.display(),
                m.len(),
                p * p
            )));
        }
        let a = DMatrix::from_fn(p, p, |i, j| m[&(i, j)]);
        if !is_symmetric(&a) {
            return Err(Error::Data(format!("{}: matrix at t = {t} is not symmetric", path.display())));
        }
        if !is_positive_definite(&a) {
            return Err(Error::Data(format!("{}: matrix at t = {t} is not positive definite", path.display())));
        }
        d.times.push(t);
        d.matrices.push(a);
    }
    Ok(d)
}

pub fn read_dataset(kind: DataKind, path: &Path) -> Result<Dataset> {
    Ok(match kind {
        DataKind::Binary => Dataset::Binary(read_binary(path)?),
        DataKind::Counts => Dataset::Counts(read_counts(path)?),
        DataKind::Categorical => Dataset::Categorical(read_categorical(path)?),
        DataKind::Covariance => Dataset::Covariance(read_covariance(path)?),
    })
}

fn resolve_experiment(a: &ExperimentArgs) -> Result<ExperimentConfig> {
    let mut cfg = match &a.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::Data(format!("{}: {e}", p.display())))?;
            serde_json::from_str::<ExperimentConfig>(&text).map_err(|e| Error::Data(format!("{}: {e}", p.display())))?
        }
        None => {
            let kind = a.kind.ok_or_else(|| Error::Data("--kind is required without --config".into()))?;
            let data = a.data.clone().ok_or_else(|| Error::Data("--data is required without --config".into()))?;
            ExperimentConfig {
                kind,
                data,
                test_data: None,
                basis: None,
                kernel: None,
                prior_mean: PriorMean::default(),
                eps: default_eps(),
                seed: 0,
                inducing: None,
                output: None,
                n_samples: default_samples(),
                version: Version::V1,
                dirichlet_prior: 1.0,
                scatter_dof: default_dof(),
                prior_gp: None,
            }
        }
    };
    if let Some(k) = a.kind {
        cfg.kind = k;
    }
    if let Some(d) = &a.data {
        cfg.data = d.clone();
    }
    if a.test_data.is_some() {
        cfg.test_data = a.test_data.clone();
    }
    if a.basis.is_some() {
        cfg.basis = a.basis;
    }
    if let Some(e) = a.eps {
        cfg.eps = e;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if a.inducing.is_some() {
        cfg.inducing = a.inducing;
    }
    if let Some(s) = a.samples {
        cfg.n_samples = s;
    }
    if a.v2 {
        cfg.version = Version::V2;
    }
    if a.output.is_some() {
        cfg.output = a.output.clone();
    }
    Ok(cfg)
}

fn queries_of(data: &Dataset) -> Vec<Vec<f64>> {
    match data {
        Dataset::Binary(d) => d.x.clone(),
        Dataset::Counts(d) => d.x.clone(),
        Dataset::Categorical(d) => d.groups.iter().map(|g| vec![g.t, g.c as f64]).collect(),
        Dataset::Covariance(d) => d.times.iter().map(|&t| vec![t]).collect(),
    }
}

/// Metrics of a prediction block against the dataset it was queried on.
pub fn dataset_metrics(data: &Dataset, pred: &Prediction, offset: usize) -> Result<Value> {
    let summ = &pred.summary[offset..offset + data.len()];
    Ok(match data {
        Dataset::Binary(d) => {
            let probs: Vec<Vec<f64>> = summ.iter().map(|s| vec![1.0 - s.mean[0], s.mean[0]]).collect();
            let labels: Vec<usize> = d.labels.iter().map(|&l| l as usize).collect();
            serde_json::to_value(classification_metrics(&probs, &labels)?).expect("serializable")
        }
        Dataset::Counts(d) => {
            let rates: Vec<f64> = summ.iter().map(|s| s.mean[0]).collect();
            let vars: Vec<f64> = summ.iter().map(|s| s.std[0] * s.std[0]).collect();
            serde_json::to_value(count_metrics(&rates, &vars, &d.counts)?).expect("serializable")
        }
        Dataset::Categorical(d) => {
            let (mut probs, mut labels) = (vec![], vec![]);
            for (g, s) in d.groups.iter().zip(summ) {
                let p = renormalize(&s.mean);
                for (k, &n) in g.counts.iter().enumerate() {
                    for _ in 0..n {
                        probs.push(p.clone());
                        labels.push(k);
                    }
                }
            }
            if labels.is_empty() {
                json!({})
            } else {
                serde_json::to_value(classification_metrics(&probs, &labels)?).expect("serializable")
            }
        }
        Dataset::Covariance(d) => {
            let mut se = 0.0;
            let mut count = 0usize;
            for (m, s) in d.matrices.iter().zip(summ) {
                for (a, b) in crate::matrixops::vec_rm(m).iter().zip(&s.mean) {
                    se += (a - b) * (a - b);
                    count += 1;
                }
            }
            json!({ "rmse": (se / count.max(1) as f64).sqrt() })
        }
    })
}

fn renormalize(p: &[f64]) -> Vec<f64> {
    let s: f64 = p.iter().sum();
    p.iter().map(|v| v / s).collect()
}

/// Runs an experiment and returns its report.
pub fn cmd_experiment(a: &ExperimentArgs) -> Result<Value> {
    let cfg = resolve_experiment(a)?;
    let train = read_dataset(cfg.kind, &cfg.data)?;
    let test = match &cfg.test_data {
        Some(p) => Some(read_dataset(cfg.kind, p)?),
        None => None,
    };
    let lm_cfg = cfg.lmgp_config();
    let total = Instant::now();

    let lm_start = Instant::now();
    let (_, params) = pseudo_likelihoods(&train, &lm_cfg)?;
    let _ = bridge_all(&params, BridgeSpec::new(lm_cfg.family, lm_cfg.basis)?)?;
    let lm_seconds = lm_start.elapsed().as_secs_f64();

    let mut queries = queries_of(&train);
    if let Some(t) = &test {
        queries.extend(queries_of(t));
    }
    let (model, pred) = lmgp(&train, &queries, &lm_cfg)?;
    let mut metrics = serde_json::Map::new();
    metrics.insert("train".into(), dataset_metrics(&train, &pred, 0)?);
    if let Some(t) = &test {
        metrics.insert("test".into(), dataset_metrics(t, &pred, train.len())?);
    }
    metrics.insert("support_violations".into(), json!(pred.support_violations));
    let report = json!({
        "command": "experiment",
        "version": env!("CARGO_PKG_VERSION"),
        "config": cfg,
        "pseudo_likelihoods": params.len(),
        "jitter": model.jitter,
        "metrics": metrics,
        "prediction": pred,
        "timings": { "lm_seconds": lm_seconds, "total_seconds": total.elapsed().as_secs_f64() },
    });
    if let Some(out) = &cfg.output {
        write_atomic(out, serde_json::to_string_pretty(&report).expect("serializable").as_bytes())?;
        let mut r = report;
        r["output"] = json!(out);
        return Ok(r);
    }
    Ok(report)
}

fn read_grid(path: &Path) -> Result<Vec<EFParams>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    let grid: Vec<EFParams> =
        serde_json::from_str(&text).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    for (i, p) in grid.iter().enumerate() {
        p.validate().map_err(|e| Error::Data(format!("{} entry {i}: {e}", path.display())))?;
    }
    Ok(grid)
}

fn fmt_num(v: f64) -> String {
    format!("{v:.10e}")
}

/// Wide table: one row per grid point, three columns per basis.
pub fn rows_csv(r: &DistanceReport) -> Result<Vec<u8>> {
    let mut w = csv_writer();
    let mut header = vec!["index".to_string()];
    for b in &r.bases {
        header.extend([format!("{b}_kl"), format!("{b}_kl_se"), format!("{b}_mmd")]);
    }
    w.write_record(&header).map_err(csv_err)?;
    for row in &r.rows {
        let mut rec = vec![row.index.to_string()];
        for e in &row.entries {
            match (&e.kl, e.valid) {
                (Some(k), true) => {
                    rec.push(fmt_num(k.estimate));
                    rec.push(fmt_num(k.std_error));
                    rec.push(e.mmd.map(fmt_num).unwrap_or_default());
                }
                _ => rec.extend(["invalid".to_string(), "invalid".to_string(), "invalid".to_string()]),
            }
        }
        w.write_record(&rec).map_err(csv_err)?;
    }
    finish_csv(w)
}

/// Long format: `grid_index,basis,metric,value,se`; invalid entries omitted.
pub fn long_csv(r: &DistanceReport) -> Result<Vec<u8>> {
    let mut w = csv_writer();
    w.write_record(["grid_index", "basis", "metric", "value", "se"]).map_err(csv_err)?;
    for row in &r.rows {
        for e in row.entries.iter().filter(|e| e.valid) {
            if let Some(k) = &e.kl {
                w.write_record([
                    row.index.to_string(),
                    e.basis.to_string(),
                    "kl".into(),
                    fmt_num(k.estimate),
                    fmt_num(k.std_error),
                ])
                .map_err(csv_err)?;
            }
            if let Some(m) = e.mmd {
                w.write_record([row.index.to_string(), e.basis.to_string(), "mmd".into(), fmt_num(m), String::new()])
                    .map_err(csv_err)?;
            }
        }
    }
    finish_csv(w)
}

pub fn cmd_distances(a: &DistancesArgs) -> Result<DistanceReport> {
    let start = Instant::now();
    let grid = match &a.grid {
        Some(p) => read_grid(p)?,
        None => default_grid(a.family),
    };
    let bases = if a.bases.is_empty() { default_bases(a.family) } else { a.bases.clone() };
    if let Some(b) = bases.iter().find(|b| !b.compatible(a.family)) {
        return Err(Error::IncompatibleBasis { family: a.family.to_string(), basis: b.to_string() });
    }
    let mut opts = SweepOptions::for_family(a.family, a.seed);
    if let Some(n) = a.n {
        opts.n = n;
    }
    opts.mmd_samples = a.mmd_samples;
    let report = distance_sweep(a.family, &bases, &grid, opts)?;
    let doc = json!({
        "command": "distances",
        "version": env!("CARGO_PKG_VERSION"),
        "report": report,
        "timings": { "total_seconds": start.elapsed().as_secs_f64() },
    });
    write_atomic(&a.output.join("report.json"), serde_json::to_string_pretty(&doc).expect("serializable").as_bytes())?;
    write_atomic(&a.output.join("rows.csv"), &rows_csv(&report)?)?;
    write_atomic(&a.output.join("long.csv"), &long_csv(&report)?)?;
    Ok(report)
}

/// The incorrect Gamma sqrt-basis inverse used to demonstrate the check.
pub fn faulty_gamma_sqrt_inverse(g: &GaussianApprox, family: Family, basis: Basis) -> Result<EFParams> {
    if family == Family::Gamma && basis == Basis::Sqrt {
        let mu = g.mean[0];
        let s2 = g.cov.diagonal()[0];
        let p = EFParams::Gamma { alpha: mu * mu / (4.0 * s2) - 0.5, lambda: 4.0 / s2 };
        p.validate()?;
        return Ok(p);
    }
    default_inverse(g, family, basis)
}

fn parse_list<T>(s: &str, parse: impl Fn(&str) -> Option<T>, what: &str) -> Result<Vec<T>> {
    s.split(',')
        .map(str::trim)
        .filter(|v| !v.is_empty())
        .map(|v| parse(v).ok_or_else(|| Error::Data(format!("unknown {what} '{v}'"))))
        .collect()
}

pub fn cmd_oracle_check(a: &OracleArgs) -> Result<Vec<OracleRow>> {
    let families = match &a.families {
        Some(s) => parse_list(s, Family::parse, "family")?,
        None => Family::ALL.to_vec(),
    };
    let bases = match &a.bases {
        Some(s) => Some(parse_list(s, Basis::parse, "basis")?),
        None => None,
    };
    let selection: Vec<(Family, Basis)> = families
        .iter()
        .flat_map(|&f| {
            let mut all = Basis::transformed_for(f);
            all.push(Basis::Identity);
            all.into_iter()
                .filter(|b| bases.as_ref().is_none_or(|s| s.contains(b)))
                .map(move |b| (f, b))
                .collect::<Vec<_>>()
        })
        .collect();
    let custom = match &a.grid {
        Some(p) => Some(read_grid(p)?),
        None => None,
    };
    let grid = |f: Family| match &custom {
        Some(g) => g.iter().filter(|p| p.family() == f).cloned().collect(),
        None => default_grid(f),
    };
    let rows = if a.faulty_gamma_sqrt_inverse {
        oracle_check(&selection, &grid, &faulty_gamma_sqrt_inverse)
    } else {
        oracle_check(&selection, &grid, &default_inverse)
    };
    if let Some(out) = &a.output {
        write_atomic(out, serde_json::to_string_pretty(&rows).expect("serializable").as_bytes())?;
    }
    Ok(rows)
}

pub fn oracle_table(rows: &[OracleRow]) -> String {
    let mut s =
        format!("{:<16} {:<16} {:>5} {:>12} {:>12}  status\n", "family", "basis", "row", "deviation", "round_trip");
    let opt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.3e}"));
    for r in rows {
        let status = match r.status {
            OracleStatus::Pass => "PASS",
            OracleStatus::BothInvalid => "PASS (both invalid)",
            OracleStatus::Fail => "FAIL",
        };
        s.push_str(&format!(
            "{:<16} {:<16} {:>5} {:>12} {:>12}  {status}",
            r.family.name(),
            r.basis.name(),
            r.index,
            opt(r.deviation),
            opt(r.round_trip)
        ));
        if r.status == OracleStatus::Fail {
            if let Some(d) = &r.detail {
                s.push_str(&format!(" ({d})"));
            }
        }
        s.push('\n');
    }
    let failed = rows.iter().filter(|r| r.status == OracleStatus::Fail).count();
    s.push_str(&format!("{} checked, {failed} failed\n", rows.len()));
    s
}

/// Two separated 1-D clusters, labels by cluster.
pub fn gen_binary(n: usize, seed: u64) -> BinaryData {
    let mut rng = rng_from_seed(seed);
    let noise = Normal::new(0.0, 0.5).expect("valid");
    let mut d = BinaryData { x: vec![], labels: vec![] };
    for i in 0..n {
        let label = i % 2 == 1;
        let centre = if label { 2.0 } else { -2.0 };
        d.x.push(vec![centre + noise.sample(&mut rng)]);
        d.labels.push(label);
    }
    d
}

/// Poisson counts with rate `exp(1 + sin x)` at uniform `x ∈ [0, 10]`.
pub fn gen_counts(n: usize, seed: u64) -> CountData {
    let mut rng = rng_from_seed(seed);
    let mut d = CountData { x: vec![], counts: vec![] };
    for _ in 0..n {
        let x: f64 = rng.random_range(0.0..10.0);
        let rate = (1.0 + x.sin()).exp();
        d.x.push(vec![x]);
        d.counts.push(Poisson::new(rate).expect("positive rate").sample(&mut rng) as u64);
    }
    d
}

fn multinomial<R: Rng + ?Sized>(rng: &mut R, total: u64, p: &[f64]) -> Vec<u64> {
    let mut left = total;
    let mut mass = 1.0;
    let mut out = Vec::with_capacity(p.len());
    for (i, &pi) in p.iter().enumerate() {
        if i + 1 == p.len() {
            out.push(left);
            break;
        }
        let q = (pi / mass).clamp(0.0, 1.0);
        let c = if left == 0 { 0 } else { Binomial::new(left, q).expect("valid").sample(rng) };
        out.push(c);
        left -= c;
        mass -= pi;
    }
    out
}

/// Class counts with smoothly drifting softmax probabilities.
pub fn gen_categorical(steps: usize, regions: usize, classes: usize, total: u64, seed: u64) -> CategoricalData {
    let mut rng = rng_from_seed(seed);
    let mut groups = vec![];
    for t in 0..steps {
        for c in 0..regions {
            let logits: Vec<f64> = (0..classes)
                .map(|k| (0.4 * t as f64 + 1.3 * k as f64 + 0.7 * c as f64).sin() + 0.3 * k as f64)
                .collect();
            groups.push(CategoricalGroup { t: t as f64, c, counts: multinomial(&mut rng, total, &softmax(&logits)) });
        }
    }
    CategoricalData { classes, regions, groups }
}

/// Sample covariance matrices (20 degrees of freedom) around a slowly
/// rotating `p × p` matrix.
pub fn gen_covariance(steps: usize, p: usize, seed: u64) -> Result<CovarianceData> {
    let mut d = CovarianceData { p, times: vec![], matrices: vec![] };
    for t in 0..steps {
        let a = 0.2 * t as f64;
        let base = DMatrix::from_fn(p, p, |i, j| {
            if i == j {
                1.0 + 0.5 * ((a + i as f64).sin())
            } else {
                0.3 * (a + (i + j) as f64).cos() / (1.0 + (i as f64 - j as f64).abs())
            }
        });
        let base = &base * base.transpose() / p as f64 + DMatrix::identity(p, p) * 0.1;
        let dof = 20.0;
        let w = Sampler::new(&EFParams::Wishart { n: dof, v: base / dof })?;
        let mut rng = rng_from_seed(derive_seed(seed, t as u64));
        let m = crate::matrixops::unvec_rm(&w.draw(&mut rng), p);
        d.times.push(t as f64);
        d.matrices.push(crate::matrixops::symmetrize(&m));
    }
    Ok(d)
}

pub fn binary_csv(d: &BinaryData) -> Result<Vec<u8>> {
    let mut w = csv_writer();
    let dim = d.x.first().map_or(1, |x| x.len());
    let mut header: Vec<String> = (1..=dim).map(|i| format!("x{i}")).collect();
    header.push("label".into());
    w.write_record(&header).map_err(csv_err)?;
    for (x, l) in d.x.iter().zip(&d.labels) {
        let mut rec: Vec<String> = x.iter().map(|v| v.to_string()).collect();
        rec.push((*l as u8).to_string());
        w.write_record(&rec).map_err(csv_err)?;
    }
    finish_csv(w)
}

pub fn counts_csv(d: &CountData) -> Result<Vec<u8>> {
    let mut w = csv_writer();
    let dim = d.x.first().map_or(1, |x| x.len());
    let mut header: Vec<String> = (1..=dim).map(|i| format!("x{i}")).collect();
    header.push("count".into());
    w.write_record(&header).map_err(csv_err)?;
    for (x, c) in d.x.iter().zip(&d.counts) {
        let mut rec: Vec<String> = x.iter().map(|v| v.to_string()).collect();
        rec.push(c.to_string());
        w.write_record(&rec).map_err(csv_err)?;
    }
    finish_csv(w)
}

pub fn categorical_csv(d: &CategoricalData) -> Result<Vec<u8>> {
    let mut w = csv_writer();
    w.write_record(["t", "c", "class", "count"]).map_err(csv_err)?;
    for g in &d.groups {
        for (k, n) in g.counts.iter().enumerate() {
            w.write_record([g.t.to_string(), g.c.to_string(), k.to_string(), n.to_string()]).map_err(csv_err)?;
        }
    }
    finish_csv(w)
}

pub fn covariance_csv(d: &CovarianceData) -> Result<Vec<u8>> {
    let mut w = csv_writer();
    w.write_record(["t", "i", "j", "value"]).map_err(csv_err)?;
    for (t, m) in d.times.iter().zip(&d.matrices) {
        for i in 0..d.p {
            for j in 0..d.p {
                w.write_record([t.to_string(), i.to_string(), j.to_string(), m[(i, j)].to_string()])
                    .map_err(csv_err)?;
            }
        }
    }
    finish_csv(w)
}

pub fn cmd_gen(a: &GenArgs) -> Result<()> {
    let bytes = match a.kind {
        GenKind::Binary => binary_csv(&gen_binary(a.n, a.seed))?,
        GenKind::Counts => counts_csv(&gen_counts(a.n, a.seed))?,
        GenKind::Categorical => categorical_csv(&gen_categorical(a.n, 2, 4, 50, a.seed))?,
        GenKind::Covariance => covariance_csv(&gen_covariance(a.n, 2, a.seed)?)?,
    };
    write_atomic(&a.output, &bytes)
}
