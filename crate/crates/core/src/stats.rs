//! Goodness-of-fit tests used by the validation harness and test suites.

use statrs::distribution::{Binomial, ChiSquared, ContinuousCDF, DiscreteCDF};

use crate::tes::brownian::bridge_sup_abs_cdf;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TestResult {
    pub statistic: f64,
    pub p_value: f64,
}

impl TestResult {
    pub fn passes(&self, alpha: f64) -> bool {
        self.p_value >= alpha
    }
}

fn kolmogorov_p(d: f64, n_eff: f64) -> f64 {
    let s = n_eff.sqrt();
    let lambda = (s + 0.12 + 0.11 / s) * d;
    (1.0 - bridge_sup_abs_cdf(lambda)).clamp(0.0, 1.0)
}

/// One-sample Kolmogorov–Smirnov test against a continuous CDF.
pub fn ks_one_sample(xs: &[f64], cdf: impl Fn(f64) -> f64) -> TestResult {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    let mut d = 0.0f64;
    for (i, x) in v.iter().enumerate() {
        let f = cdf(*x);
        d = d.max(f - i as f64 / n).max((i + 1) as f64 / n - f);
    }
    TestResult {
        statistic: d,
        p_value: kolmogorov_p(d, n),
    }
}

/// Two-sample Kolmogorov–Smirnov test.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> TestResult {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d = 0.0f64;
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    TestResult {
        statistic: d,
        p_value: kolmogorov_p(d, na * nb / (na + nb)),
    }
}

/// Pearson chi-square against expected probabilities. Bins with tiny
/// expectation are merged into their neighbour so every bin expects ≥ 5.
pub fn chi_square(observed: &[u64], probs: &[f64]) -> TestResult {
    let n: u64 = observed.iter().sum();
    let mut bins: Vec<(f64, f64)> = Vec::new();
    let (mut o, mut e) = (0.0, 0.0);
    for (ob, p) in observed.iter().zip(probs) {
        o += *ob as f64;
        e += p * n as f64;
        if e >= 5.0 {
            bins.push((o, e));
            o = 0.0;
            e = 0.0;
        }
    }
    if e > 0.0 || o > 0.0 {
        match bins.last_mut() {
            Some(last) => {
                last.0 += o;
                last.1 += e;
            }
            None => bins.push((o, e)),
        }
    }
    let stat: f64 = bins.iter().map(|(o, e)| (o - e) * (o - e) / e).sum();
    let df = bins.len().saturating_sub(1).max(1) as f64;
    TestResult {
        statistic: stat,
        p_value: 1.0 - ChiSquared::new(df).unwrap().cdf(stat),
    }
}

/// Two-sample chi-square homogeneity test on shared bins.
pub fn chi_square_two_sample(a: &[u64], b: &[u64]) -> TestResult {
    let (na, nb) = (a.iter().sum::<u64>() as f64, b.iter().sum::<u64>() as f64);
    let mut stat = 0.0;
    let mut used = 0;
    for (x, y) in a.iter().zip(b) {
        let tot = (*x + *y) as f64;
        if tot == 0.0 {
            continue;
        }
        used += 1;
        let ea = tot * na / (na + nb);
        let eb = tot * nb / (na + nb);
        stat += (*x as f64 - ea).powi(2) / ea + (*y as f64 - eb).powi(2) / eb;
    }
    let df = (used as f64 - 1.0).max(1.0);
    TestResult {
        statistic: stat,
        p_value: 1.0 - ChiSquared::new(df).unwrap().cdf(stat),
    }
}

/// Exact two-sided binomial test (doubling the smaller tail).
pub fn binomial_test(successes: u64, trials: u64, p: f64) -> TestResult {
    let b = Binomial::new(p, trials).unwrap();
    let lower = b.cdf(successes);
    let upper = if successes == 0 { 1.0 } else { b.sf(successes - 1) };
    TestResult {
        statistic: successes as f64 / trials as f64,
        p_value: (2.0 * lower.min(upper)).min(1.0),
    }
}

/// Per-test significance keeping the family-wise level at `alpha`.
pub fn bonferroni(alpha: f64, tests: usize) -> f64 {
    alpha / tests.max(1) as f64
}

/// Sample mean and standard error.
pub fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    (mean, (var / n).sqrt())
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * statrs::function::erf::erfc(-x / std::f64::consts::SQRT_2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Stream;

    #[test]
    fn ks_accepts_normal_rejects_shift() {
        let mut r = Stream::from_seed(1);
        let xs: Vec<f64> = (0..2000).map(|_| r.normal()).collect();
        assert!(ks_one_sample(&xs, normal_cdf).passes(0.01));
        assert!(!ks_one_sample(&xs, |x| normal_cdf(x - 0.2)).passes(0.01));
    }

    #[test]
    fn ks_two_sample_same_law() {
        let mut r = Stream::from_seed(2);
        let a: Vec<f64> = (0..1000).map(|_| r.normal()).collect();
        let b: Vec<f64> = (0..1500).map(|_| r.normal()).collect();
        assert!(ks_two_sample(&a, &b).passes(0.01));
    }

    #[test]
    fn binomial_examples() {
        assert!(binomial_test(50, 100, 0.5).p_value > 0.99);
        assert!(binomial_test(80, 100, 0.5).p_value < 1e-6);
    }

    #[test]
    fn chi_square_uniform_die() {
        let r = chi_square(&[100, 98, 103, 99, 101, 99], &[1.0 / 6.0; 6]);
        assert!(r.passes(0.5));
        assert!(!chi_square(&[200, 98, 103, 99, 101, 0], &[1.0 / 6.0; 6]).passes(0.01));
    }
}
