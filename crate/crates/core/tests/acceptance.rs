//! One PASS/FAIL line per acceptance criterion. Run with `--nocapture` to
//! see the lines; the test fails if any criterion fails.

use std::time::Instant;

use lapmatch::bridges::{lm_inverse_with, standard_laplace, InverseOptions};
use lapmatch::cli::{gen_binary, gen_categorical, gen_counts, gen_covariance};
use lapmatch::diagnostics::{
    approximation, default_bases, default_grid, default_inverse, default_kl_samples, distance_sweep, ess_sample,
    euclidean_gaussian, mc_kl, oracle_check, param_relative_error, OracleStatus, SweepOptions,
};
use lapmatch::gp::gp_predict;
use lapmatch::matrixops::{sym_eigen, unvec_rm};
use lapmatch::pipeline::{bridge_all, lmgp, pseudo_likelihoods, CountData, Dataset, LMGPConfig};
use lapmatch::transforms::{softmax, BasisTransform};
use lapmatch::{lm_forward, Basis, BridgeSpec, EFParams, Family};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn report(id: usize, name: &str, start: Instant, o: &Outcome) {
    println!(
        "criterion {id} {}: {name}: {} [{:.1} s]",
        if o.pass { "PASS" } else { "FAIL" },
        o.detail,
        start.elapsed().as_secs_f64()
    );
}

fn all_pairs() -> Vec<(Family, Basis)> {
    Family::ALL
        .iter()
        .flat_map(|&f| Basis::transformed_for(f).into_iter().chain([Basis::Identity]).map(move |b| (f, b)))
        .collect()
}

fn oracle_equivalence() -> Outcome {
    let start = Instant::now();
    let rows = oracle_check(&all_pairs(), &default_grid, &default_inverse);
    let failed: Vec<_> = rows.iter().filter(|r| r.status == OracleStatus::Fail).collect();
    let worst = rows.iter().filter_map(|r| r.deviation).fold(0.0, f64::max);
    let both = rows.iter().filter(|r| r.status == OracleStatus::BothInvalid).count();
    let secs = start.elapsed().as_secs_f64();
    Outcome {
        pass: failed.is_empty() && worst <= 1e-6 && secs < 120.0,
        detail: format!(
            "{} points, {} failed, {both} invalid on both routes, max relative deviation {worst:.2e}, {secs:.1} s",
            rows.len(),
            failed.len()
        ),
    }
}

fn round_trip() -> Outcome {
    let opts = InverseOptions { structured_sqrtm: true };
    let (mut checked, mut worst) = (0usize, 0.0f64);
    for family in Family::ALL {
        for basis in Basis::transformed_for(family) {
            let spec = BridgeSpec::new(family, basis).unwrap();
            for p in default_grid(family) {
                let Ok(g) = lm_forward(&p, spec) else { continue };
                let err =
                    lm_inverse_with(&g, family, basis, opts).map_or(f64::INFINITY, |b| param_relative_error(&p, &b));
                worst = worst.max(err);
                checked += 1;
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut pseudo = 0.0f64;
    for k in 2..=6 {
        let t =
            BasisTransform::for_params(Basis::SoftmaxInverse, &EFParams::Dirichlet { alpha: vec![1.0; k] }).unwrap();
        for _ in 0..200 {
            let mut x: Vec<f64> = (0..k).map(|_| rng.random_range(-4.0..4.0)).collect();
            let m = x.iter().sum::<f64>() / k as f64;
            x.iter_mut().for_each(|v| *v -= m);
            let back = t.centered_pseudo_inverse(&softmax(&x)).unwrap();
            pseudo = pseudo.max(x.iter().zip(&back).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
        }
    }
    Outcome {
        pass: worst <= 1e-9 && pseudo <= 1e-9,
        detail: format!("{checked} bridge round trips, max relative error {worst:.2e}; softmax pseudo-inverse max error {pseudo:.2e}"),
    }
}

fn exponential_anchors() -> Outcome {
    let n = 1_000_000;
    let (mut log, mut sqrt) = (vec![], vec![]);
    for lambda in 1..=10 {
        let params = EFParams::Exponential { lambda: lambda as f64 };
        let (p, q) = approximation(&params, Basis::Log).unwrap();
        log.push(mc_kl(&p, &q, n, lambda).unwrap().estimate);
        let (p, q) = approximation(&params, Basis::Sqrt).unwrap();
        sqrt.push(mc_kl(&p, &q, n, 100 + lambda).unwrap().estimate);
    }
    let range = |v: &[f64]| {
        (v.iter().cloned().fold(f64::INFINITY, f64::min), v.iter().cloned().fold(f64::NEG_INFINITY, f64::max))
    };
    let (lmin, lmax) = range(&log);
    let (smin, smax) = range(&sqrt);
    let pass = log.iter().all(|k| (k - 0.33).abs() <= 0.03)
        && lmax - lmin <= 0.02
        && sqrt.iter().all(|k| (k - 0.12).abs() <= 0.02);
    Outcome {
        pass,
        detail: format!("log KL in [{lmin:.4}, {lmax:.4}], sqrt KL in [{smin:.4}, {smax:.4}] over lambda = 1..10"),
    }
}

fn standard_is_invalid(p: &EFParams) -> Option<bool> {
    Some(match *p {
        EFParams::Exponential { .. } => true,
        EFParams::Gamma { alpha, .. } if alpha < 1.0 => true,
        EFParams::ChiSquared { k } if k <= 2.0 => true,
        EFParams::Beta { alpha, beta } if alpha < 1.0 || beta < 1.0 => true,
        _ => return None,
    })
}

fn basis_superiority() -> Outcome {
    let mut problems = vec![];
    let (mut compared, mut invalid_checked) = (0, 0);
    for family in Family::ALL {
        let opts = SweepOptions { n: default_kl_samples(family), mmd_samples: 0, seed: 4 };
        let report = distance_sweep(family, &default_bases(family), &default_grid(family), opts).unwrap();
        for row in &report.rows {
            let id = &row.entries[0];
            if standard_is_invalid(&row.params) == Some(true) {
                invalid_checked += 1;
                if id.valid {
                    problems.push(format!("{family} row {} should be invalid in the standard basis", row.index));
                }
            }
            let Some(std_kl) = id.kl else { continue };
            let best = row.entries[1..].iter().filter_map(|e| e.kl).map(|k| k.estimate).fold(f64::INFINITY, f64::min);
            compared += 1;
            if best >= std_kl.estimate {
                problems.push(format!(
                    "{family} row {}: transformed {best:.4} vs standard {:.4}",
                    row.index, std_kl.estimate
                ));
            }
        }
    }
    let cases = [
        EFParams::Exponential { lambda: 3.0 },
        EFParams::Gamma { alpha: 0.9, lambda: 1.0 },
        EFParams::ChiSquared { k: 2.0 },
        EFParams::ChiSquared { k: 1.5 },
        EFParams::Beta { alpha: 0.9, beta: 3.0 },
        EFParams::Beta { alpha: 3.0, beta: 0.5 },
    ];
    for p in &cases {
        invalid_checked += 1;
        if standard_laplace(p).is_ok() {
            problems.push(format!("{p:?} should have no standard Laplace approximation"));
        }
    }
    Outcome {
        pass: problems.is_empty(),
        detail: if problems.is_empty() {
            format!("{compared} grid points compared, {invalid_checked} invalidity checks")
        } else {
            problems.join("; ")
        },
    }
}

fn lm_seconds(n: usize, reps: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(n as u64);
    let data = Dataset::Counts(CountData {
        x: (0..n).map(|i| vec![i as f64]).collect(),
        counts: (0..n).map(|_| rng.random_range(0..20)).collect(),
    });
    let cfg = LMGPConfig::new(Family::Gamma, Basis::Log);
    let spec = BridgeSpec::new(Family::Gamma, Basis::Log).unwrap();
    let times: Vec<f64> = (0..reps)
        .map(|_| {
            let t = Instant::now();
            let (_, params) = pseudo_likelihoods(&data, &cfg).unwrap();
            let g = bridge_all(&params, spec).unwrap();
            assert_eq!(g.len(), n);
            t.elapsed().as_secs_f64()
        })
        .collect();
    times.into_iter().fold(f64::INFINITY, f64::min)
}

fn lm_timing() -> Outcome {
    lm_seconds(100_000, 3);
    let sizes = [20_000usize, 40_000, 60_000, 80_000, 100_000];
    let times: Vec<f64> = sizes.iter().map(|&n| lm_seconds(n, 9)).collect();
    let xs: Vec<f64> = sizes.iter().map(|&n| n as f64).collect();
    let mx = xs.iter().sum::<f64>() / xs.len() as f64;
    let my = times.iter().sum::<f64>() / times.len() as f64;
    let sxy: f64 = xs.iter().zip(&times).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let syy: f64 = times.iter().map(|y| (y - my) * (y - my)).sum();
    let r2 = sxy * sxy / (sxx * syy);
    let t_max = times[sizes.len() - 1];
    Outcome {
        pass: t_max < 0.1 && r2 > 0.99,
        detail: format!("{:.4} s for 1e5 points, linear fit R^2 = {r2:.4} over {sizes:?}", t_max),
    }
}

/// Centers every `k`-block of a latent vector.
fn center_blocks(v: &DVector<f64>, k: usize) -> DVector<f64> {
    let mut out = v.clone();
    for b in out.as_mut_slice().chunks_mut(k) {
        let m = b.iter().sum::<f64>() / k as f64;
        b.iter_mut().for_each(|x| *x -= m);
    }
    out
}

fn ess_versus_lm() -> Outcome {
    let (classes, steps) = (4, 4);
    let data = gen_categorical(steps, 1, classes, 50, 6);
    let cfg = LMGPConfig::new(Family::Dirichlet, Basis::SoftmaxInverse);
    let queries: Vec<Vec<f64>> = data.groups.iter().map(|g| vec![g.t, g.c as f64]).collect();
    let (model, pred) = lmgp(&Dataset::Categorical(data.clone()), &queries, &cfg).unwrap();
    let lm_mean =
        center_blocks(&DVector::from_iterator(steps * classes, pred.latent_mean.iter().flatten().copied()), classes);

    let prior_cov = DMatrix::from_fn(model.inputs.len(), model.inputs.len(), |i, j| {
        model.kernel.eval(&model.inputs[i], &model.inputs[j]).unwrap() + if i == j { model.jitter } else { 0.0 }
    });
    let prior_mean =
        DVector::from_iterator(model.inputs.len(), model.inputs.iter().map(|x| model.prior_mean.eval(x).unwrap()));
    let prior = euclidean_gaussian(prior_mean, prior_cov);
    let weights: Vec<f64> =
        data.groups.iter().flat_map(|g| g.counts.iter().map(|&n| n as f64 + cfg.dirichlet_prior)).collect();
    let loglik = |f: &DVector<f64>| {
        f.as_slice()
            .chunks(classes)
            .zip(weights.chunks(classes))
            .map(|(z, w)| {
                let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
                z.iter().zip(w).map(|(v, n)| n * (v - lse)).sum::<f64>()
            })
            .sum()
    };

    let truth_chain = ess_sample(&prior, loglik, 200_000, 2_000, 61).unwrap();
    let truth = center_blocks(&(truth_chain.iter().sum::<DVector<f64>>() / truth_chain.len() as f64), classes);
    let sd = {
        let c: Vec<DVector<f64>> = truth_chain.iter().map(|f| center_blocks(f, classes)).collect();
        DVector::from_fn(truth.len(), |i, _| {
            (c.iter().map(|f| (f[i] - truth[i]).powi(2)).sum::<f64>() / c.len() as f64).sqrt()
        })
    };

    let chain: Vec<DVector<f64>> =
        ess_sample(&prior, loglik, 10_000, 1_000, 62).unwrap().iter().map(|f| center_blocks(f, classes)).collect();
    let ess_mean = chain.iter().sum::<DVector<f64>>() / chain.len() as f64;
    let worst_z = (&ess_mean - &lm_mean).component_div(&sd).amax();

    let lm_err = (&lm_mean - &truth).norm();
    let mut running = DVector::zeros(truth.len());
    let mut crossing = None;
    for (i, f) in chain.iter().enumerate() {
        running += f;
        if crossing.is_none() && (&running / (i + 1) as f64 - &truth).norm() < lm_err {
            crossing = Some(i + 1);
        }
    }
    let pass = worst_z < 1.0 && crossing.is_some_and(|n| (100..=10_000).contains(&n));
    Outcome {
        pass,
        detail: format!(
            "max |ESS mean - LM mean| = {worst_z:.3} posterior sd; LM error {lm_err:.4}; ESS running mean beats LM after {} draws",
            crossing.map_or("never".to_string(), |n| n.to_string())
        ),
    }
}

fn support_safety() -> Outcome {
    let mut problems = vec![];
    for run in 0..100u64 {
        let mut cfg = LMGPConfig::new(Family::Beta, Basis::Logit);
        cfg.seed = run;
        cfg.n_samples = 200;
        let train = gen_binary(12 + (run % 8) as usize, run);
        let queries: Vec<Vec<f64>> = (0..9).map(|i| vec![-4.0 + i as f64]).collect();
        let (_, pred) = lmgp(&Dataset::Binary(train), &queries, &cfg).unwrap();
        if pred.support_violations > 0 || pred.summary.iter().any(|s| !(s.mean[0] >= 0.0 && s.mean[0] <= 1.0)) {
            problems.push(format!("binary run {run}"));
        }

        let mut cfg = LMGPConfig::new(Family::Dirichlet, Basis::SoftmaxInverse);
        cfg.seed = run;
        cfg.n_samples = 100;
        cfg.keep_samples = true;
        let cat = gen_categorical(4, 2, 3 + (run % 3) as usize, 10 + run, run);
        let q: Vec<Vec<f64>> = cat.groups.iter().map(|g| vec![g.t + 0.5, g.c as f64]).collect();
        let (_, pred) = lmgp(&Dataset::Categorical(cat), &q, &cfg).unwrap();
        let simplex = pred
            .samples
            .as_ref()
            .unwrap()
            .iter()
            .flatten()
            .all(|p| p.iter().all(|v| *v >= 0.0 && *v <= 1.0) && (p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        if pred.support_violations > 0 || !simplex {
            problems.push(format!("categorical run {run}"));
        }

        let basis = if run % 2 == 0 { Basis::Log } else { Basis::Sqrt };
        let mut cfg = LMGPConfig::new(Family::Gamma, basis);
        cfg.seed = run;
        cfg.n_samples = 200;
        let counts = gen_counts(20 + (run % 10) as usize, run);
        let counts = if basis == Basis::Sqrt {
            CountData { counts: counts.counts.iter().map(|c| c + 1).collect(), ..counts }
        } else {
            counts
        };
        let q: Vec<Vec<f64>> = (0..15).map(|i| vec![i as f64 * 0.7]).collect();
        let (_, pred) = lmgp(&Dataset::Counts(counts), &q, &cfg).unwrap();
        if pred.support_violations > 0
            || pred.summary.iter().any(|s| !(s.q05[0] > 0.0 && s.q50[0] > 0.0 && s.q95[0] > 0.0))
        {
            problems.push(format!("count run {run}"));
        }

        let basis = if run % 2 == 0 { Basis::MatrixLog } else { Basis::MatrixSqrt };
        let mut cfg = LMGPConfig::new(Family::InverseWishart, basis);
        cfg.seed = run;
        cfg.n_samples = 100;
        cfg.keep_samples = true;
        let p = 2 + (run % 2) as usize;
        let cov = gen_covariance(6, p, run).unwrap();
        let q: Vec<Vec<f64>> = (0..7).map(|t| vec![t as f64 - 0.5]).collect();
        let pred = match lmgp(&Dataset::Covariance(cov), &q, &cfg) {
            Ok((_, pred)) => pred,
            Err(e) => {
                problems.push(format!("covariance run {run} ({basis}): {e}"));
                continue;
            }
        };
        let spd = pred.samples.as_ref().unwrap().iter().flatten().all(|d| {
            let m = unvec_rm(d, p);
            sym_eigen(&m).0.min() >= -1e-10 * m.trace()
        });
        if pred.support_violations > 0 || !spd {
            problems.push(format!("covariance run {run}"));
        }
    }
    Outcome {
        pass: problems.is_empty(),
        detail: if problems.is_empty() {
            "100 runs each of binary, categorical, count and covariance pipelines".to_string()
        } else {
            problems.join(", ")
        },
    }
}

fn binary_end_to_end() -> Outcome {
    let train = gen_binary(40, 1);
    let test = gen_binary(40, 2);
    let cfg = LMGPConfig::new(Family::Beta, Basis::Logit);
    let mut queries = train.x.clone();
    queries.extend(test.x.iter().cloned());
    let (model, pred) = lmgp(&Dataset::Binary(train.clone()), &queries, &cfg).unwrap();
    let acc = |labels: &[bool], offset: usize| {
        labels.iter().enumerate().filter(|(i, &l)| (pred.summary[offset + i].mean[0] > 0.5) == l).count() as f64
            / labels.len() as f64
    };
    let (train_acc, test_acc) = (acc(&train.labels, 0), acc(&test.labels, train.labels.len()));

    let mut induced_cfg = cfg.clone();
    induced_cfg.inducing = Some(train.x.len());
    let (induced, _) = lmgp(&Dataset::Binary(train.clone()), &queries, &induced_cfg).unwrap();
    let a = gp_predict(&model, &queries, true).unwrap();
    let b = gp_predict(&induced, &queries, true).unwrap();
    let diff = (&a.mean - &b.mean).amax().max((a.cov.unwrap() - b.cov.unwrap()).amax());
    Outcome {
        pass: train_acc == 1.0 && test_acc >= 0.95 && diff <= 1e-10,
        detail: format!(
            "train accuracy {train_acc:.3}, test accuracy {test_acc:.3}, inducing k = n max difference {diff:.2e}"
        ),
    }
}

#[test]
fn acceptance() {
    type Check = fn() -> Outcome;
    let criteria: [(&str, Check); 8] = [
        ("oracle equivalence", oracle_equivalence),
        ("round trip", round_trip),
        ("exponential distance anchors", exponential_anchors),
        ("transformed basis superiority", basis_superiority),
        ("LM timing", lm_timing),
        ("ESS versus LM", ess_versus_lm),
        ("pipeline support safety", support_safety),
        ("binary end to end", binary_end_to_end),
    ];
    let mut failed = vec![];
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let o = check();
        report(i + 1, name, start, &o);
        if !o.pass {
            failed.push(i + 1);
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
