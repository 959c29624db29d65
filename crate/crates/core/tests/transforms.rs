mod common;

use common::*;
use lapmatch::distributions::{log_pdf, EFParams};
use lapmatch::matrixops::{half_vec_dim, unvech, vec_rm, vech};
use lapmatch::transforms::{
    numeric_laplace, numeric_laplace_raw, push_forward, transform_samples, Basis, BasisTransform, Direction, FnDensity,
    LogDensity, DEFAULT_TOLERANCE,
};
use lapmatch::{Covariance, Error};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn scalar_cases() -> Vec<EFParams> {
    vec![
        EFParams::Exponential { lambda: 0.5 },
        EFParams::Exponential { lambda: 4.0 },
        EFParams::Gamma { alpha: 0.7, lambda: 1.3 },
        EFParams::Gamma { alpha: 9.0, lambda: 0.5 },
        EFParams::InverseGamma { alpha: 1.5, lambda: 0.8 },
        EFParams::InverseGamma { alpha: 6.0, lambda: 3.0 },
        EFParams::ChiSquared { k: 1.0 },
        EFParams::ChiSquared { k: 12.0 },
    ]
}

fn random_spd(rng: &mut ChaCha8Rng, p: usize) -> DMatrix<f64> {
    let a = DMatrix::from_fn(p, p, |_, _| rng.random_range(-1.0..1.0));
    &a * a.transpose() + DMatrix::identity(p, p) * 0.3
}

fn random_sym(rng: &mut ChaCha8Rng, p: usize) -> DMatrix<f64> {
    let a = DMatrix::from_fn(p, p, |_, _| rng.random_range(-1.0..1.0));
    (&a + a.transpose()) * 0.5
}

/// Central-difference Jacobian of `f` at `z`, log|det|.
fn fd_log_abs_det(f: impl Fn(&[f64]) -> Vec<f64>, z: &[f64]) -> f64 {
    let n = z.len();
    let h = 1e-6;
    let mut j = DMatrix::zeros(n, n);
    for c in 0..n {
        let mut zp = z.to_vec();
        let mut zm = z.to_vec();
        zp[c] += h;
        zm[c] -= h;
        let (fp, fm) = (f(&zp), f(&zm));
        for r in 0..n {
            j[(r, c)] = (fp[r] - fm[r]) / (2.0 * h);
        }
    }
    j.determinant().abs().ln()
}

#[test]
fn exponential_log_density_at_zero() {
    let d = push_forward(&EFParams::Exponential { lambda: 1.0 }, &BasisTransform::Log).unwrap();
    assert!((d.log_density(&[0.0]) + 1.0).abs() < 1e-14);
}

#[test]
fn uniform_beta_in_logit_basis_is_logistic() {
    let d = push_forward(&EFParams::Beta { alpha: 1.0, beta: 1.0 }, &BasisTransform::Logit).unwrap();
    for y in [-3.0f64, -0.5, 0.0, 1.2, 4.0] {
        let s = 1.0 / (1.0 + (-y).exp());
        assert!((d.log_density(&[y]) - (s * (1.0 - s)).ln()).abs() < 1e-12);
    }
    assert!((integrate_real(|y| d.log_density(&[y])) - 1.0).abs() < 1e-8);
}

#[test]
fn identity_basis_reproduces_log_pdf() {
    for p in scalar_cases() {
        let d = push_forward(&p, &BasisTransform::Identity).unwrap();
        for x in [0.1, 0.9, 2.5] {
            assert!((d.log_density(&[x]) - log_pdf(&p, &[x]).unwrap()).abs() < 1e-12);
        }
    }
}

#[test]
fn incompatible_bases_are_rejected() {
    let e = push_forward(&EFParams::Gamma { alpha: 2.0, lambda: 1.0 }, &BasisTransform::Logit);
    assert!(matches!(e, Err(Error::IncompatibleBasis { .. })));
    let e = push_forward(&EFParams::Beta { alpha: 2.0, beta: 1.0 }, &BasisTransform::MatrixLog { p: 1 });
    assert!(matches!(e, Err(Error::IncompatibleBasis { .. })));
}

#[test]
fn transformed_scalar_densities_integrate_to_one() {
    for p in scalar_cases() {
        let log = push_forward(&p, &BasisTransform::Log).unwrap();
        let z = integrate_real(|y| log.log_density(&[y]));
        assert!((z - 1.0).abs() < 1e-6, "{p:?} log: {z}");
        let sqrt = push_forward(&p, &BasisTransform::Sqrt).unwrap();
        let z = integrate_positive(|y| sqrt.log_density(&[y]));
        assert!((z - 1.0).abs() < 1e-6, "{p:?} sqrt: {z}");
    }
    for (a, b) in [(0.6, 0.8), (3.0, 7.0)] {
        let d = push_forward(&EFParams::Beta { alpha: a, beta: b }, &BasisTransform::Logit).unwrap();
        let z = integrate_real(|y| d.log_density(&[y]));
        assert!((z - 1.0).abs() < 1e-6);
    }
}

#[test]
fn sample_transform_examples() {
    let out = transform_samples(&[vec![0.0], vec![1.0]], &BasisTransform::Log, Direction::Inverse).unwrap();
    assert_eq!(out, vec![vec![1.0], vec![std::f64::consts::E]]);
    let sm = BasisTransform::SoftmaxInverse { k: 3 };
    let out = transform_samples(&[vec![0.0; 3]], &sm, Direction::Inverse).unwrap();
    for v in &out[0] {
        assert!((v - 1.0 / 3.0).abs() < 1e-15);
    }
    assert!(matches!(sm.forward(&[0.2, 0.3, 0.5]), Err(Error::DirectionUnavailable(_))));
    let c = transform_samples(&[vec![0.2, 0.3, 0.5]], &sm, Direction::CenteredPseudoInverse).unwrap();
    assert!(c[0].iter().sum::<f64>().abs() < 1e-14);
    let ms = BasisTransform::MatrixSqrt { p: 2 };
    let out = ms.inverse(&[2.0, 0.0, 0.0, 3.0]).unwrap();
    for (a, b) in out.iter().zip([4.0, 0.0, 0.0, 9.0]) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn scalar_round_trips() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..1000 {
        let y: f64 = rng.random_range(-20.0..20.0);
        for b in [BasisTransform::Identity, BasisTransform::Log, BasisTransform::Logit] {
            if b == BasisTransform::Logit && y.abs() > 15.0 {
                continue;
            }
            let back = b.forward(&b.inverse(&[y]).unwrap()).unwrap()[0];
            assert!((back - y).abs() <= 1e-10 * (1.0 + y.abs()), "{b:?} {y} -> {back}");
        }
        let y = y.abs() + 1e-3;
        let s = BasisTransform::Sqrt;
        assert!((s.forward(&s.inverse(&[y]).unwrap()).unwrap()[0] - y).abs() <= 1e-10 * y);
    }
}

#[test]
fn softmax_round_trip_through_centered_pseudo_inverse() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..1000 {
        let k = rng.random_range(2..7);
        let mut y: Vec<f64> = (0..k).map(|_| rng.random_range(-5.0..5.0)).collect();
        let m = y.iter().sum::<f64>() / k as f64;
        y.iter_mut().for_each(|v| *v -= m);
        let b = BasisTransform::SoftmaxInverse { k };
        let back = b.centered_pseudo_inverse(&b.inverse(&y).unwrap()).unwrap();
        for (a, c) in back.iter().zip(&y) {
            assert!((a - c).abs() < 1e-10);
        }
    }
}

#[test]
fn matrix_round_trips() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..1000 {
        let p = rng.random_range(2..5);
        let y = random_sym(&mut rng, p);
        let b = BasisTransform::MatrixLog { p };
        let yv: Vec<f64> = vec_rm(&y).iter().copied().collect();
        let back = b.forward(&b.inverse(&yv).unwrap()).unwrap();
        for (a, c) in back.iter().zip(&yv) {
            assert!((a - c).abs() < 1e-10);
        }
        let s = random_spd(&mut rng, p);
        let sv: Vec<f64> = vec_rm(&s).iter().copied().collect();
        let b = BasisTransform::MatrixSqrt { p };
        let back = b.forward(&b.inverse(&sv).unwrap()).unwrap();
        for (a, c) in back.iter().zip(&sv) {
            assert!((a - c).abs() < 1e-10);
        }
    }
}

#[test]
fn scalar_jacobians_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..200 {
        let y: f64 = rng.random_range(-4.0..4.0);
        for b in [BasisTransform::Log, BasisTransform::Logit] {
            let fd = fd_log_abs_det(|z| b.inverse(z).unwrap(), &[y]);
            assert!((b.log_abs_det_jacobian(&[y]).unwrap() - fd).abs() < 1e-6);
        }
        let y = y.abs() + 0.1;
        let b = BasisTransform::Sqrt;
        let fd = fd_log_abs_det(|z| b.inverse(z).unwrap(), &[y]);
        assert!((b.log_abs_det_jacobian(&[y]).unwrap() - fd).abs() < 1e-6);
    }
}

#[test]
fn softmax_jacobian_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for k in 2..7 {
        let b = BasisTransform::SoftmaxInverse { k };
        for _ in 0..20 {
            let u: Vec<f64> = (0..k - 1).map(|_| rng.random_range(-2.0..2.0)).collect();
            let map = |z: &[f64]| {
                let mut x = z.to_vec();
                x.push(-z.iter().sum::<f64>());
                let mut pi = b.inverse(&x).unwrap();
                pi.truncate(k - 1);
                pi
            };
            let fd = fd_log_abs_det(map, &u);
            assert!((b.log_abs_det_jacobian(&u).unwrap() - fd).abs() < 1e-6, "k={k}");
        }
    }
}

#[test]
fn matrix_jacobians_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for p in [2, 3] {
        for _ in 0..20 {
            for (b, y) in [
                (BasisTransform::MatrixLog { p }, random_sym(&mut rng, p)),
                (BasisTransform::MatrixSqrt { p }, random_spd(&mut rng, p)),
            ] {
                let z: Vec<f64> = vech(&y).iter().copied().collect();
                assert_eq!(z.len(), half_vec_dim(p));
                let map = |z: &[f64]| {
                    let m = unvech(z, p);
                    let x = b.inverse(vec_rm(&m).as_slice()).unwrap();
                    vech(&DMatrix::from_row_slice(p, p, &x)).iter().copied().collect::<Vec<_>>()
                };
                let fd = fd_log_abs_det(map, &z);
                let an = b.log_abs_det_jacobian(&z).unwrap();
                assert!((an - fd).abs() < 1e-6, "{b:?}: {an} vs {fd}");
            }
        }
    }
}

#[test]
fn numeric_laplace_gamma_log_basis() {
    let p = EFParams::Gamma { alpha: 4.0, lambda: 2.0 };
    let d = push_forward(&p, &BasisTransform::Log).unwrap();
    let g = numeric_laplace(&d, &d.default_init(), DEFAULT_TOLERANCE).unwrap();
    assert!((g.mean[0] - 2f64.ln()).abs() < 1e-6);
    assert!((g.cov_dense()[(0, 0)] - 0.25).abs() < 1e-6);
}

#[test]
fn numeric_laplace_has_no_mode_for_small_shape_gamma() {
    let p = EFParams::Gamma { alpha: 0.5, lambda: 1.0 };
    let d = push_forward(&p, &BasisTransform::Identity).unwrap();
    let e = numeric_laplace(&d, &d.default_init(), DEFAULT_TOLERANCE);
    assert!(matches!(e, Err(Error::NoValidLaplace(_))), "{e:?}");
}

#[test]
fn numeric_laplace_recovers_exact_gaussians() {
    let mu = DVector::from_vec(vec![0.7, -1.3, 2.0]);
    let cov = DMatrix::from_row_slice(3, 3, &[2.0, 0.3, -0.2, 0.3, 0.5, 0.1, -0.2, 0.1, 1.2]);
    let prec = cov.clone().try_inverse().unwrap();
    let dens = FnDensity {
        dim: 3,
        f: |z: &[f64]| {
            let d = DVector::from_column_slice(z) - &mu;
            -0.5 * (d.transpose() * &prec * &d)[(0, 0)]
        },
    };
    let r = numeric_laplace_raw(&dens, &[0.0; 3], DEFAULT_TOLERANCE).unwrap();
    assert!((&r.mode - &mu).amax() < 1e-8);
    assert!((&r.covariance - &cov).amax() < 1e-8);

    let scalar = FnDensity { dim: 1, f: |z: &[f64]| -0.5 * (z[0] - 3.0).powi(2) / 0.04 };
    let r = numeric_laplace_raw(&scalar, &[0.0], DEFAULT_TOLERANCE).unwrap();
    assert!((r.mode[0] - 3.0).abs() < 1e-8);
    assert!((r.covariance[(0, 0)] - 0.04).abs() < 1e-8);
}

#[test]
fn numeric_laplace_on_matrix_density_returns_half_vec_gaussian() {
    let p = EFParams::Wishart { n: 6.0, v: DMatrix::identity(2, 2) };
    let d = push_forward(&p, &BasisTransform::MatrixLog { p: 2 }).unwrap();
    let g = numeric_laplace(&d, &d.default_init(), DEFAULT_TOLERANCE).unwrap();
    assert_eq!(g.mean.len(), 3);
    assert!(matches!(g.cov, Covariance::Dense(_)));
}

#[test]
fn basis_names_round_trip() {
    for b in [
        Basis::Identity,
        Basis::Log,
        Basis::Sqrt,
        Basis::Logit,
        Basis::SoftmaxInverse,
        Basis::MatrixLog,
        Basis::MatrixSqrt,
    ] {
        assert_eq!(Basis::parse(b.name()), Some(b));
        let js = serde_json::to_string(&b).unwrap();
        assert_eq!(serde_json::from_str::<Basis>(&js).unwrap(), b);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn logit_forward_inverts_inverse(y in -30.0f64..30.0) {
        let b = BasisTransform::Logit;
        let x = b.inverse(&[y]).unwrap();
        prop_assume!(x[0] > 0.0 && x[0] < 1.0);
        let back = b.forward(&x).unwrap()[0];
        // Relative precision of σ(y) bounds the round trip for large |y|.
        let tol = 1e-10 * (1.0 + y.abs()) + 4.0 * f64::EPSILON / (x[0] * (1.0 - x[0]));
        prop_assert!((back - y).abs() <= tol);
    }

    #[test]
    fn log_forward_inverts_inverse(y in -300.0f64..300.0) {
        let b = BasisTransform::Log;
        let back = b.forward(&b.inverse(&[y]).unwrap()).unwrap()[0];
        prop_assert!((back - y).abs() <= 1e-10 * (1.0 + y.abs()));
    }

    #[test]
    fn sqrt_forward_inverts_inverse(y in 1e-6f64..1e6) {
        let b = BasisTransform::Sqrt;
        let back = b.forward(&b.inverse(&[y]).unwrap()).unwrap()[0];
        prop_assert!((back - y).abs() <= 1e-10 * y);
    }
}
