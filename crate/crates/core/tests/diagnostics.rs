mod common;

use common::*;
use lapmatch::bridges::standard_laplace;
use lapmatch::diagnostics::{
    approximation, constrain_sum_zero, default_bases, default_grid, dirichlet_kl_constrained, distance_sweep,
    ess_sample, euclidean_gaussian, mc_kl, mmd, mmd_median, CovarianceView, SweepOptions,
};
use lapmatch::gp::Kernel;
use lapmatch::transforms::LogDensity;
use lapmatch::{Basis, EFParams, Error, Family};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn normal_draws(n: usize, d: usize, shift: f64, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z = Normal::new(0.0, 1.0).unwrap();
    (0..n).map(|_| (0..d).map(|_| shift + z.sample(&mut rng)).collect()).collect()
}

/// Batch-means standard error of a chain component.
fn batch_se(xs: &[f64], batches: usize) -> f64 {
    let size = xs.len() / batches;
    let means: Vec<f64> = xs.chunks(size).take(batches).map(|c| c.iter().sum::<f64>() / c.len() as f64).collect();
    mean_and_se(&means).1
}

#[test]
fn monte_carlo_kl_matches_quadrature() {
    for params in [EFParams::Beta { alpha: 0.7, beta: 2.0 }, EFParams::Gamma { alpha: 1.5, lambda: 2.0 }] {
        let basis = if params.family() == Family::Beta { Basis::Logit } else { Basis::Log };
        let (p, q) = approximation(&params, basis).unwrap();
        let qe = q.evaluator().unwrap();
        let exact = simpson(
            |u| {
                let lp = p.log_density(&[u]);
                if lp.is_finite() {
                    lp.exp() * (lp - qe.log_pdf(&[u]))
                } else {
                    0.0
                }
            },
            -60.0,
            60.0,
            240_000,
        );
        let est = mc_kl(&p, &q, 400_000, 3).unwrap();
        assert!((est.estimate - exact).abs() < 4.0 * est.std_error, "{est:?} vs {exact}");
        assert_eq!(est.skipped, 0);
    }
}

#[test]
fn exponential_kl_levels() {
    for lambda in [1.0, 4.0, 10.0] {
        let params = EFParams::Exponential { lambda };
        let (p, q) = approximation(&params, Basis::Log).unwrap();
        let log = mc_kl(&p, &q, 1_000_000, 1).unwrap();
        assert!((log.estimate - 0.33).abs() <= 0.03, "{log:?}");
        let (p, q) = approximation(&params, Basis::Sqrt).unwrap();
        let sqrt = mc_kl(&p, &q, 1_000_000, 1).unwrap();
        assert!((sqrt.estimate - 0.12).abs() <= 0.02, "{sqrt:?}");
    }
}

#[test]
fn kl_is_deterministic_and_mismatches_are_reported() {
    let params = EFParams::Gamma { alpha: 3.0, lambda: 1.0 };
    let (p, q) = approximation(&params, Basis::Sqrt).unwrap();
    assert_eq!(mc_kl(&p, &q, 50_000, 9).unwrap(), mc_kl(&p, &q, 50_000, 9).unwrap());
    let wrong = euclidean_gaussian(DVector::zeros(2), DMatrix::identity(2, 2));
    assert!(matches!(mc_kl(&p, &wrong, 100, 1), Err(Error::SupportMismatch(_))));
}

#[test]
fn gamma_log_kl_decreases_along_the_grid() {
    let kls: Vec<_> = default_grid(Family::Gamma)
        .iter()
        .map(|g| {
            let (p, q) = approximation(g, Basis::Log).unwrap();
            mc_kl(&p, &q, 1_000_000, 5).unwrap()
        })
        .collect();
    for w in kls.windows(2) {
        let tol = 2.0 * (w[0].std_error.powi(2) + w[1].std_error.powi(2)).sqrt();
        assert!(w[1].estimate < w[0].estimate + tol, "{:?}", w);
    }
}

#[test]
fn projected_covariance_annihilates_ones() {
    let g = lapmatch::lm_forward(
        &EFParams::Dirichlet { alpha: vec![1.2, 3.0, 0.4, 2.2] },
        lapmatch::BridgeSpec::new(Family::Dirichlet, Basis::SoftmaxInverse).unwrap(),
    )
    .unwrap();
    let diag = DMatrix::from_diagonal(&g.cov.diagonal());
    let mean = DVector::from_vec(vec![0.3, -0.1, 0.5, 0.2]);
    let (m, c) = constrain_sum_zero(&mean, &diag).unwrap();
    assert!((&c * DVector::from_element(4, 1.0)).amax() < 1e-14);
    assert!(m.sum().abs() < 1e-14);
    assert!(matches!(constrain_sum_zero(&mean, &DMatrix::zeros(4, 4)), Err(Error::DegenerateProjection(_))));
    let anti = DMatrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 1.0]);
    assert!(matches!(
        constrain_sum_zero(&DVector::from_vec(vec![1.0, 1.0]), &anti),
        Err(Error::DegenerateProjection(_))
    ));
}

#[test]
fn concentrated_dirichlet_is_nearly_gaussian() {
    let kl = dirichlet_kl_constrained(&[100.0; 3], 100_000, 2, CovarianceView::Full).unwrap();
    assert!(kl.estimate <= 0.01, "{kl:?}");
}

#[test]
fn dirichlet_kl_decreases_along_the_grid() {
    let kls: Vec<_> = default_grid(Family::Dirichlet)
        .iter()
        .map(|g| {
            let EFParams::Dirichlet { alpha } = g else { unreachable!() };
            dirichlet_kl_constrained(alpha, 100_000, 4, CovarianceView::Full).unwrap()
        })
        .collect();
    for w in kls.windows(2) {
        let tol = 2.0 * (w[0].std_error.powi(2) + w[1].std_error.powi(2)).sqrt();
        assert!(w[1].estimate < w[0].estimate + tol, "{:?}", w);
    }
}

#[test]
fn two_component_dirichlet_kl_matches_beta_logit_kl() {
    for (a, b) in [(0.8, 2.5), (3.0, 1.5), (12.0, 7.0)] {
        let d = dirichlet_kl_constrained(&[a, b], 400_000, 6, CovarianceView::Full).unwrap();
        let (p, q) = approximation(&EFParams::Beta { alpha: a, beta: b }, Basis::Logit).unwrap();
        let beta = mc_kl(&p, &q, 400_000, 7).unwrap();
        let tol = 4.0 * (d.std_error.powi(2) + beta.std_error.powi(2)).sqrt();
        assert!((d.estimate - beta.estimate).abs() < tol, "{d:?} vs {beta:?}");
    }
}

#[test]
fn kl_estimates_are_not_significantly_negative() {
    for family in [Family::Exponential, Family::Beta, Family::InverseGamma, Family::ChiSquared] {
        for g in default_grid(family).iter().step_by(3) {
            for basis in Basis::transformed_for(family) {
                let Ok((p, q)) = approximation(g, basis) else { continue };
                let kl = mc_kl(&p, &q, 100_000, 8).unwrap();
                assert!(kl.estimate >= -4.0 * kl.std_error && kl.std_error.is_finite());
            }
        }
    }
}

#[test]
fn mmd_of_identical_sets_is_numerically_zero() {
    let xs = normal_draws(200, 2, 0.0, 1);
    let v = mmd(&xs, &xs, &Kernel::rbf(1.0, 1.0)).unwrap();
    // The unbiased statistic of a set against itself is -2/(n-1) · (1 - mean off-diagonal k) ≤ 0.
    assert!(v <= 1e-12, "{v}");
}

#[test]
fn mmd_matches_brute_force_on_point_masses() {
    let p = vec![vec![0.0, 0.0], vec![0.0, 0.0], vec![0.1, 0.0]];
    let q = vec![vec![10.0, 10.0], vec![10.0, 10.2]];
    let k = Kernel::rbf(0.7, 1.3);
    let kv = |a: &[f64], b: &[f64]| {
        let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
        1.3 * (-d2 / (2.0 * 0.7 * 0.7)).exp()
    };
    let mut pp = 0.0;
    for i in 0..p.len() {
        for j in 0..p.len() {
            if i != j {
                pp += kv(&p[i], &p[j]);
            }
        }
    }
    let mut qq = 0.0;
    for i in 0..q.len() {
        for j in 0..q.len() {
            if i != j {
                qq += kv(&q[i], &q[j]);
            }
        }
    }
    let mut pq = 0.0;
    for a in &p {
        for b in &q {
            pq += kv(a, b);
        }
    }
    let brute = pp / 6.0 + qq / 2.0 - 2.0 * pq / 6.0;
    assert!((mmd(&p, &q, &k).unwrap() - brute).abs() < 1e-12);
    assert!((mmd(&q, &p, &k).unwrap() - brute).abs() < 1e-12);
}

#[test]
fn mmd_between_samples_of_one_distribution_is_near_zero() {
    let vals: Vec<f64> = (0..40)
        .map(|s| mmd_median(&normal_draws(150, 2, 0.0, 2 * s), &normal_draws(150, 2, 0.0, 2 * s + 1)).unwrap())
        .collect();
    let (m, se) = mean_and_se(&vals);
    assert!(m.abs() < 4.0 * se, "{m} ± {se}");
    let shifted = mmd_median(&normal_draws(150, 2, 0.0, 1), &normal_draws(150, 2, 1.5, 2)).unwrap();
    assert!(shifted > m + 10.0 * se);
}

#[test]
fn mmd_rejects_bad_inputs() {
    let k = Kernel::rbf(1.0, 1.0);
    assert!(matches!(
        mmd(&[vec![0.0], vec![1.0]], &[vec![0.0, 1.0], vec![1.0, 1.0]], &k),
        Err(Error::DimensionMismatch(_))
    ));
    assert!(mmd(&[vec![0.0]], &[vec![0.0], vec![1.0]], &k).is_err());
}

#[test]
fn ess_with_flat_likelihood_samples_the_prior() {
    let prior =
        euclidean_gaussian(DVector::from_vec(vec![1.0, -2.0]), DMatrix::from_row_slice(2, 2, &[2.0, 0.6, 0.6, 1.0]));
    let chain = ess_sample(&prior, |_| 0.0, 10_000, 200, 3).unwrap();
    for d in 0..2 {
        let xs: Vec<f64> = chain.iter().map(|v| v[d]).collect();
        let (m, _) = mean_and_se(&xs);
        assert!((m - prior.mean[d]).abs() < 4.0 * batch_se(&xs, 50));
    }
}

#[test]
fn ess_recovers_a_conjugate_posterior() {
    let prior = euclidean_gaussian(DVector::zeros(1), DMatrix::identity(1, 1));
    let chain = ess_sample(&prior, |f| -0.5 * (1.0 - f[0]).powi(2), 10_000, 200, 4).unwrap();
    let xs: Vec<f64> = chain.iter().map(|v| v[0]).collect();
    let (m, _) = mean_and_se(&xs);
    assert!((m - 0.5).abs() < 4.0 * batch_se(&xs, 50), "{m}");
    assert_eq!(chain, ess_sample(&prior, |f| -0.5 * (1.0 - f[0]).powi(2), 10_000, 200, 4).unwrap());
}

#[test]
fn ess_matches_an_analytic_gp_posterior() {
    let x = [0.0, 1.0, 2.0];
    let kern = Kernel::rbf(1.0, 1.0);
    let k = DMatrix::from_fn(3, 3, |i, j| kern.eval(&[x[i]], &[x[j]]).unwrap());
    let y = DVector::from_vec(vec![1.0, -0.5, 0.3]);
    let noise = 0.5;
    let a = (&k + DMatrix::identity(3, 3) * noise).try_inverse().unwrap();
    let post_mean = &k * &a * &y;
    let prior = euclidean_gaussian(DVector::zeros(3), k);
    let ll = |f: &DVector<f64>| -0.5 * (f - &y).norm_squared() / noise;
    let chain = ess_sample(&prior, ll, 10_000, 500, 5).unwrap();
    for d in 0..3 {
        let xs: Vec<f64> = chain.iter().map(|v| v[d]).collect();
        let (m, _) = mean_and_se(&xs);
        assert!((m - post_mean[d]).abs() < 4.0 * batch_se(&xs, 50), "{d}: {m} vs {}", post_mean[d]);
    }
}

#[test]
fn ess_needs_a_positive_definite_prior() {
    let prior = euclidean_gaussian(DVector::zeros(2), DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]));
    assert!(matches!(ess_sample(&prior, |_| 0.0, 10, 0, 1), Err(Error::NotPositiveDefinite(_))));
}

#[test]
fn exponential_sweep_has_no_standard_column() {
    let grid = default_grid(Family::Exponential);
    let opts = SweepOptions { n: 20_000, mmd_samples: 200, seed: 11 };
    let report = distance_sweep(Family::Exponential, &default_bases(Family::Exponential), &grid, opts).unwrap();
    assert_eq!(report.rows.len(), 10);
    for row in &report.rows {
        let id = &row.entries[0];
        assert_eq!(id.basis, Basis::Identity);
        assert!(!id.valid && id.kl.is_none() && id.reason.is_some());
        for e in &row.entries[1..] {
            assert!(e.valid && e.kl.unwrap().std_error.is_finite() && e.mmd.is_some());
        }
    }
    let again = distance_sweep(Family::Exponential, &default_bases(Family::Exponential), &grid, opts).unwrap();
    assert_eq!(report, again);
}

#[test]
fn gamma_standard_column_is_valid_from_alpha_one() {
    let grid = default_grid(Family::Gamma);
    let opts = SweepOptions { n: 20_000, mmd_samples: 0, seed: 12 };
    let report = distance_sweep(Family::Gamma, &[Basis::Identity, Basis::Log], &grid, opts).unwrap();
    for row in &report.rows {
        let EFParams::Gamma { alpha, .. } = row.params else { unreachable!() };
        assert_eq!(row.entries[0].valid, alpha > 1.0, "alpha {alpha}");
        assert_eq!(row.entries[0].valid, standard_laplace(&row.params).is_ok());
        assert!(row.entries[1].valid && row.entries[1].mmd.is_none());
    }
    assert!(distance_sweep(Family::Beta, &[Basis::Logit], &grid, opts).is_err());
}

#[test]
fn sweep_rows_are_independent_of_grid_position() {
    let grid = default_grid(Family::Beta);
    let opts = SweepOptions { n: 10_000, mmd_samples: 100, seed: 13 };
    let full = distance_sweep(Family::Beta, &[Basis::Logit], &grid, opts).unwrap();
    let head = distance_sweep(Family::Beta, &[Basis::Logit], &grid[..3], opts).unwrap();
    assert_eq!(&full.rows[..3], &head.rows[..]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn mmd_is_symmetric(seed in 0u64..1000, shift in -2.0f64..2.0) {
        let p = normal_draws(30, 2, 0.0, seed);
        let q = normal_draws(25, 2, shift, seed + 1);
        let k = Kernel::rbf(0.9, 1.0);
        let a = mmd(&p, &q, &k).unwrap();
        let b = mmd(&q, &p, &k).unwrap();
        prop_assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn projection_is_idempotent(a in proptest::collection::vec(0.2f64..20.0, 2..6)) {
        let g = lapmatch::lm_forward(
            &EFParams::Dirichlet { alpha: a.clone() },
            lapmatch::BridgeSpec::new(Family::Dirichlet, Basis::SoftmaxInverse).unwrap(),
        ).unwrap();
        let diag = DMatrix::from_diagonal(&g.cov.diagonal());
        let (m1, c1) = constrain_sum_zero(&g.mean, &diag).unwrap();
        let (m2, c2) = constrain_sum_zero(&m1, &c1).unwrap();
        prop_assert!((&m1 - &m2).amax() < 1e-10 && (&c1 - &c2).amax() < 1e-10);
    }
}
