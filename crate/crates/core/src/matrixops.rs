//! Symmetric-matrix functional calculus, Kronecker-type products and the
//! half-vectorized Gaussian density used by the matrix-variate bridges.
//!
//! Vectorization is row-major throughout: entry `(i, j)` of a `p×p` matrix
//! sits at index `i*p + j`. Half-vectorization keeps the upper triangle in
//! row-major order: `(0,0), (0,1), …, (0,p-1), (1,1), …`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative tolerance for symmetry checks.
pub const SYMMETRY_TOL: f64 = 1e-12;
/// Positive-definiteness threshold relative to the largest eigenvalue.
pub const PD_TOL: f64 = 1e-10;
/// Eigenvalue floor (relative to the largest) applied before log/sqrt.
pub const EIG_CLAMP: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Definiteness {
    PositiveDefinite,
    PositiveSemidefinite,
    Indefinite,
}

/// A validated symmetric matrix with its definiteness tag.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix {
    data: DMatrix<f64>,
    definiteness: Definiteness,
}

impl SymMatrix {
    pub fn new(data: DMatrix<f64>) -> Result<Self> {
        if !data.is_square() {
            return Err(Error::DimensionMismatch(format!(
                "expected a square matrix, got {}x{}",
                data.nrows(),
                data.ncols()
            )));
        }
        if !is_symmetric(&data) {
            return Err(Error::InvalidParams("matrix is not symmetric".into()));
        }
        let data = symmetrize(&data);
        let definiteness = classify(&data);
        Ok(SymMatrix { data, definiteness })
    }

    pub fn dim(&self) -> usize {
        self.data.nrows()
    }

    pub fn definiteness(&self) -> Definiteness {
        self.definiteness
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.data
    }
}

fn classify(a: &DMatrix<f64>) -> Definiteness {
    let (vals, _) = sym_eigen(a);
    let max_abs = vals.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let min = vals.min();
    if max_abs == 0.0 {
        return Definiteness::PositiveSemidefinite;
    }
    if min > PD_TOL * max_abs {
        Definiteness::PositiveDefinite
    } else if min >= -PD_TOL * max_abs {
        Definiteness::PositiveSemidefinite
    } else {
        Definiteness::Indefinite
    }
}

pub fn is_symmetric(a: &DMatrix<f64>) -> bool {
    if !a.is_square() {
        return false;
    }
    let scale = a.amax().max(f64::MIN_POSITIVE);
    let n = a.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            if (a[(i, j)] - a[(j, i)]).abs() > SYMMETRY_TOL * scale {
                return false;
            }
        }
    }
    true
}

pub fn symmetrize(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

/// Eigen-decomposition of the symmetric part of `a`, eigenvalues ascending.
pub fn sym_eigen(a: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(symmetrize(a));
    let n = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let vals = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vecs = DMatrix::zeros(n, n);
    for (c, &i) in order.iter().enumerate() {
        vecs.set_column(c, &eig.eigenvectors.column(i));
    }
    (vals, vecs)
}

/// Positive definiteness by the relative eigenvalue rule.
pub fn is_positive_definite(a: &DMatrix<f64>) -> bool {
    if !is_symmetric(a) {
        return false;
    }
    let (vals, _) = sym_eigen(a);
    let max = vals.max();
    max > 0.0 && vals.min() > PD_TOL * max
}

/// `U diag(f(λ)) Uᵀ`.
pub fn from_eigen(vals: &DVector<f64>, vecs: &DMatrix<f64>, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
    let d = DVector::from_iterator(vals.len(), vals.iter().map(|&v| f(v)));
    let m = vecs * DMatrix::from_diagonal(&d) * vecs.transpose();
    symmetrize(&m)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatrixFunction {
    Logm,
    Expm,
    Sqrtm,
}

/// Applies `f` to the eigenvalues of a symmetric matrix (principal branches).
pub fn spd_funm(a: &DMatrix<f64>, f: MatrixFunction) -> Result<DMatrix<f64>> {
    if !a.is_square() {
        return Err(Error::DimensionMismatch("spd_funm needs a square matrix".into()));
    }
    if !is_symmetric(a) {
        return Err(Error::InvalidParams("spd_funm needs a symmetric matrix".into()));
    }
    let (vals, vecs) = sym_eigen(a);
    match f {
        MatrixFunction::Expm => Ok(from_eigen(&vals, &vecs, f64::exp)),
        MatrixFunction::Logm | MatrixFunction::Sqrtm => {
            let max = vals.max();
            if max <= 0.0 || vals.min() < -PD_TOL * max {
                return Err(Error::NotPositiveDefinite(format!("eigenvalues in [{:e}, {:e}]", vals.min(), max)));
            }
            let floor = EIG_CLAMP * max;
            let g: fn(f64) -> f64 = if f == MatrixFunction::Logm { f64::ln } else { f64::sqrt };
            Ok(from_eigen(&vals, &vecs, |v| g(v.max(floor))))
        }
    }
}

pub fn logm(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    spd_funm(a, MatrixFunction::Logm)
}

pub fn expm(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    spd_funm(a, MatrixFunction::Expm)
}

pub fn sqrtm(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    spd_funm(a, MatrixFunction::Sqrtm)
}

/// Log-determinant of an SPD matrix via Cholesky.
pub fn log_det_spd(a: &DMatrix<f64>) -> Result<f64> {
    let chol =
        a.clone().cholesky().ok_or_else(|| Error::NotPositiveDefinite("Cholesky factorization failed".into()))?;
    Ok(2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>())
}

/// SPD inverse via Cholesky.
pub fn spd_inverse(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let chol =
        a.clone().cholesky().ok_or_else(|| Error::NotPositiveDefinite("Cholesky factorization failed".into()))?;
    Ok(symmetrize(&chol.inverse()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KronKind {
    Kron,
    Box,
    Sym,
}

/// `(A⊗B)_{(ij)(kl)} = a_ik b_jl`.
pub fn kron(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let (m, n) = a.shape();
    let (p, q) = b.shape();
    DMatrix::from_fn(m * p, n * q, |r, c| a[(r / p, c / q)] * b[(r % p, c % q)])
}

/// `(A⊠B)_{(ij)(kl)} = a_il b_jk` for square `A` (p×p) and `B` (q×q).
pub fn box_product(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !a.is_square() || !b.is_square() {
        return Err(Error::DimensionMismatch("box product needs square inputs".into()));
    }
    let p = a.nrows();
    let q = b.nrows();
    Ok(DMatrix::from_fn(p * q, q * p, |r, c| {
        let (i, j) = (r / q, r % q);
        let (k, l) = (c / p, c % p);
        a[(i, l)] * b[(j, k)]
    }))
}

/// `A⊛B = A⊗B + A⊠B + B⊗A + B⊠A` (no normalizing factor).
pub fn sym_kron(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !a.is_square() || a.shape() != b.shape() {
        return Err(Error::DimensionMismatch("symmetric Kronecker product needs square inputs of equal size".into()));
    }
    Ok(kron(a, b) + box_product(a, b)? + kron(b, a) + box_product(b, a)?)
}

pub fn kron_product(a: &DMatrix<f64>, b: &DMatrix<f64>, kind: KronKind) -> Result<DMatrix<f64>> {
    match kind {
        KronKind::Kron => Ok(kron(a, b)),
        KronKind::Box => box_product(a, b),
        KronKind::Sym => sym_kron(a, b),
    }
}

/// Symmetrizing and antisymmetrizing projectors `(Γ, Δ)` on `ℝ^{p²}`.
pub fn symmetry_projectors(p: usize) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = p * p;
    let delta = |a: usize, b: usize| if a == b { 1.0 } else { 0.0 };
    let gamma = DMatrix::from_fn(n, n, |r, c| {
        let (i, j, k, l) = (r / p, r % p, c / p, c % p);
        0.5 * (delta(i, k) * delta(j, l) + delta(i, l) * delta(k, j))
    });
    let anti = DMatrix::from_fn(n, n, |r, c| {
        let (i, j, k, l) = (r / p, r % p, c / p, c % p);
        0.5 * (delta(i, k) * delta(j, l) - delta(i, l) * delta(k, j))
    });
    (gamma, anti)
}

pub fn vec_rm(a: &DMatrix<f64>) -> DVector<f64> {
    let (r, c) = a.shape();
    DVector::from_fn(r * c, |k, _| a[(k / c, k % c)])
}

pub fn unvec_rm(v: &[f64], p: usize) -> DMatrix<f64> {
    DMatrix::from_fn(p, p, |i, j| v[i * p + j])
}

pub fn half_vec_dim(p: usize) -> usize {
    p * (p + 1) / 2
}

/// Index pairs `(i, j)`, `i ≤ j`, in half-vectorization order.
pub fn half_vec_pairs(p: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::with_capacity(half_vec_dim(p));
    for i in 0..p {
        for j in i..p {
            out.push((i, j));
        }
    }
    out
}

pub fn vech(a: &DMatrix<f64>) -> DVector<f64> {
    let pairs = half_vec_pairs(a.nrows());
    DVector::from_iterator(pairs.len(), pairs.iter().map(|&(i, j)| a[(i, j)]))
}

pub fn unvech(h: &[f64], p: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(p, p);
    for (k, &(i, j)) in half_vec_pairs(p).iter().enumerate() {
        m[(i, j)] = h[k];
        m[(j, i)] = h[k];
    }
    m
}

/// Duplication matrix `D` with `vec(X) = D vech(X)` for symmetric `X`.
pub fn duplication(p: usize) -> DMatrix<f64> {
    let pairs = half_vec_pairs(p);
    let mut d = DMatrix::zeros(p * p, pairs.len());
    for (k, &(i, j)) in pairs.iter().enumerate() {
        d[(i * p + j, k)] = 1.0;
        d[(j * p + i, k)] = 1.0;
    }
    d
}

/// Precision on half-vectorized coordinates, `Dᵀ Σ⁻¹ D`, for an
/// unconstrained `p²×p²` covariance.
pub fn half_vec_precision(cov: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = cov.nrows();
    let p = (n as f64).sqrt().round() as usize;
    if p * p != n || !cov.is_square() {
        return Err(Error::DimensionMismatch(format!("covariance of size {n} is not p²×p²")));
    }
    let prec = spd_inverse(cov)?;
    let d = duplication(p);
    Ok(symmetrize(&(d.transpose() * prec * d)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum SymNormalization {
    /// Gaussian on the `p(p+1)/2` free coordinates.
    #[default]
    HalfVectorized,
    /// Degrees-of-freedom ratio constant on the full `p²` quadratic form.
    DofRatio,
}

/// Log-density of a Gaussian restricted to symmetric matrices.
pub fn sym_gaussian_logpdf(
    x: &DMatrix<f64>,
    mean: &DMatrix<f64>,
    cov: &DMatrix<f64>,
    mode: SymNormalization,
) -> Result<f64> {
    let p = x.nrows();
    if !x.is_square() || mean.shape() != x.shape() || cov.shape() != (p * p, p * p) {
        return Err(Error::DimensionMismatch("sym_gaussian_logpdf shapes".into()));
    }
    let diff = x - mean;
    match mode {
        SymNormalization::HalfVectorized => {
            let prec_h = half_vec_precision(cov)?;
            let h = vech(&diff);
            let m = h.len() as f64;
            let quad = (h.transpose() * &prec_h * &h)[(0, 0)];
            Ok(-0.5 * m * (2.0 * std::f64::consts::PI).ln() + 0.5 * log_det_spd(&prec_h)? - 0.5 * quad)
        }
        SymNormalization::DofRatio => {
            let prec = spd_inverse(cov)?;
            let v = vec_rm(&diff);
            let quad = (v.transpose() * &prec * &v)[(0, 0)];
            let (gamma, _) = symmetry_projectors(p);
            let (gvals, gvecs) = sym_eigen(&gamma);
            let cols: Vec<usize> = (0..gvals.len()).filter(|&k| gvals[k] > 0.5).collect();
            let u = DMatrix::from_fn(p * p, cols.len(), |r, c| gvecs[(r, cols[c])]);
            let reduced = u.transpose() * cov * &u;
            let pf = p as f64;
            let ratio = 0.5 * pf * (pf + 1.0) / (pf * pf);
            Ok(ratio.ln() - (2.0 / pf) * (2.0 * std::f64::consts::PI).ln() - 0.5 * log_det_spd(&reduced)? - 0.5 * quad)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kron_identity() {
        let i2 = DMatrix::<f64>::identity(2, 2);
        assert_eq!(kron(&i2, &i2), DMatrix::identity(4, 4));
    }

    #[test]
    fn scalar_sym_kron_is_four() {
        let one = DMatrix::from_element(1, 1, 1.0);
        assert_eq!(sym_kron(&one, &one).unwrap()[(0, 0)], 4.0);
    }

    #[test]
    fn duplication_round_trip() {
        let a = DMatrix::from_row_slice(3, 3, &[1.0, 2.0, 3.0, 2.0, 4.0, 5.0, 3.0, 5.0, 6.0]);
        let d = duplication(3);
        assert_eq!(d * vech(&a), vec_rm(&a));
        assert_eq!(unvech(vech(&a).as_slice(), 3), a);
    }

    #[test]
    fn p1_is_scalar_gaussian() {
        let x = DMatrix::from_element(1, 1, 0.7);
        let m = DMatrix::from_element(1, 1, 0.2);
        let c = DMatrix::from_element(1, 1, 2.0);
        let got = sym_gaussian_logpdf(&x, &m, &c, SymNormalization::HalfVectorized).unwrap();
        let want = -0.5 * (2.0 * std::f64::consts::PI * 2.0).ln() - 0.25 * 0.25;
        assert!((got - want).abs() < 1e-14);
    }
}
