#![allow(dead_code)]

/// Composite Simpson rule on `[lo, hi]` with `n` (even) intervals.
pub fn simpson(f: impl Fn(f64) -> f64, lo: f64, hi: f64, n: usize) -> f64 {
    let n = n + n % 2;
    let h = (hi - lo) / n as f64;
    let mut s = f(lo) + f(hi);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        s += w * f(lo + i as f64 * h);
    }
    s * h / 3.0
}

/// `∫₀^∞ exp(log_f(x)) dx` through `x = eᵗ`.
pub fn integrate_positive(log_f: impl Fn(f64) -> f64) -> f64 {
    simpson(|t| (log_f(t.exp()) + t).exp(), -60.0, 60.0, 240_000)
}

/// `∫₀¹ exp(log_f(x)) dx` through `x = σ(t)`.
pub fn integrate_unit(log_f: impl Fn(f64) -> f64) -> f64 {
    simpson(
        |t| {
            let x = 1.0 / (1.0 + (-t).exp());
            let lj = -(1.0 + (-t).exp()).ln() - (1.0 + t.exp()).ln();
            (log_f(x) + lj).exp()
        },
        -60.0,
        60.0,
        240_000,
    )
}

/// `∫ exp(log_f(y)) dy` over the real line.
pub fn integrate_real(log_f: impl Fn(f64) -> f64) -> f64 {
    simpson(|y| log_f(y).exp(), -80.0, 80.0, 320_000)
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}

/// Kolmogorov–Smirnov statistic of `xs` against `cdf`.
pub fn ks_statistic(xs: &mut [f64], cdf: impl Fn(f64) -> f64) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, &x)| {
            let c = cdf(x);
            (c - i as f64 / n).abs().max((c - (i + 1) as f64 / n).abs())
        })
        .fold(0.0, f64::max)
}

/// 1% critical value of the one-sample KS statistic (asymptotic).
pub fn ks_critical_1pct(n: usize) -> f64 {
    1.628 / (n as f64).sqrt()
}

pub fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
    (m, (v / n).sqrt())
}
