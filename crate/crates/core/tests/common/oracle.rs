//! Independent reference implementations.

use std::f64::consts::PI;

/// Accuracy, macro-F1 and kappa from a row-major `k×k` count matrix, computed
/// by expanding it into individual (truth, prediction) pairs.
pub fn brute_scores(k: usize, counts: &[u64]) -> (f64, f64, f64) {
    let pairs: Vec<(usize, usize)> = (0..k * k)
        .flat_map(|i| std::iter::repeat_n((i / k, i % k), counts[i] as usize))
        .collect();
    let n = pairs.len() as f64;
    if pairs.is_empty() {
        return (0.0, 0.0, 0.0);
    }
    let agree = pairs.iter().filter(|(t, p)| t == p).count() as f64;
    let accuracy = agree / n;

    let mut f1s = Vec::new();
    for c in 0..k {
        let truth_c = pairs.iter().filter(|(t, _)| *t == c).count() as f64;
        if truth_c == 0.0 {
            continue;
        }
        let pred_c = pairs.iter().filter(|(_, p)| *p == c).count() as f64;
        let hits = pairs.iter().filter(|&&(t, p)| t == c && p == c).count() as f64;
        let precision = if pred_c > 0.0 { hits / pred_c } else { 0.0 };
        let recall = hits / truth_c;
        f1s.push(if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        });
    }
    let f1 = f1s.iter().sum::<f64>() / f1s.len() as f64;

    let mut pe = 0.0;
    for c in 0..k {
        let a = pairs.iter().filter(|(t, _)| *t == c).count() as f64 / n;
        let b = pairs.iter().filter(|(_, p)| *p == c).count() as f64 / n;
        pe += a * b;
    }
    let kappa = if pe >= 1.0 { 1.0 } else { (accuracy - pe) / (1.0 - pe) };
    (accuracy, f1, kappa)
}

/// Analytic CDF of Beta(α, β) for α, β ∈ {1, 2}.
pub fn beta_cdf(alpha: u8, beta: u8, x: f64) -> f64 {
    let x = x.clamp(0.0, 1.0);
    match (alpha, beta) {
        (1, 1) => x,
        (2, 1) => x * x,
        (1, 2) => 1.0 - (1.0 - x) * (1.0 - x),
        (2, 2) => 3.0 * x * x - 2.0 * x * x * x,
        _ => panic!("unsupported Beta({alpha},{beta})"),
    }
}

/// One-sample Kolmogorov-Smirnov statistic.
pub fn ks_statistic(mut xs: Vec<f64>, cdf: impl Fn(f64) -> f64) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            ((i + 1) as f64 / n - f).max(f - i as f64 / n)
        })
        .fold(0.0, f64::max)
}

/// Asymptotic KS critical value at significance 0.01.
pub fn ks_critical_01(n: usize) -> f64 {
    1.628 / (n as f64).sqrt()
}

/// Periodogram power of `x` averaged over the DFT bins in `[lo, hi]` Hz.
pub fn periodogram_band(x: &[f64], fs: f64, lo: f64, hi: f64) -> f64 {
    let n = x.len();
    let (mut total, mut bins) = (0.0, 0);
    for k in 0..=n / 2 {
        let f = k as f64 * fs / n as f64;
        if f < lo || f > hi {
            continue;
        }
        let (re, im) = x.iter().enumerate().fold((0.0, 0.0), |(re, im), (t, &v)| {
            let a = 2.0 * PI * f * t as f64 / fs;
            (re + v * a.cos(), im - v * a.sin())
        });
        total += (re * re + im * im) / n as f64;
        bins += 1;
    }
    total / bins.max(1) as f64
}

/// Lag of the peak of the cross-correlation of `a` and `b` over
/// `-max_lag..=max_lag`; positive means `b` trails `a`.
pub fn xcorr_peak_lag(a: &[f64], b: &[f64], max_lag: i64) -> i64 {
    let n = a.len() as i64;
    (-max_lag..=max_lag)
        .map(|lag| {
            let s: f64 = (0..n)
                .filter(|&i| (0..n).contains(&(i + lag)))
                .map(|i| a[i as usize] * b[(i + lag) as usize])
                .sum();
            (lag, s)
        })
        .max_by(|x, y| x.1.total_cmp(&y.1))
        .unwrap()
        .0
}
