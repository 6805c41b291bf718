//! Exact linear Bernoulli factory: from i.i.d. Bernoulli(p) coins, one
//! Bernoulli(αp) flip when αp ≤ 1 − ε.
//!
//! For α ≤ 1 the flip is `Bern(α) ∧ coin`. Otherwise a random walk on the
//! number `i` of pending Bernoulli(αp) successes moves down with probability
//! αp/(1+αp) (a logistic factory) and up otherwise, so `(αp)^i` is harmonic.
//! When `i` reaches the threshold `k`, the target `(αp)^k` is split as
//! `(1+γε)^{-k} · (α(1+γε)p)^k` and the walk continues with the geared
//! constant.

use crate::error::{Result, SdeError, StageTag};
use crate::rng::Stream;

pub const DEFAULT_PULL_CAP: u64 = 1_000_000;
const GAMMA: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FactorySpec {
    pub alpha: f64,
    pub eps: f64,
}

impl FactorySpec {
    pub fn new(alpha: f64, eps: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha.is_finite()) || !(eps > 0.0 && eps <= 0.5) {
            return Err(SdeError::Contract(format!("factory needs α > 0 and ε ∈ (0, 1/2], got {alpha}, {eps}")));
        }
        Ok(FactorySpec { alpha, eps })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Flip {
    pub bit: bool,
    pub pulls: u64,
}

struct Counted<'a, F> {
    coin: &'a mut F,
    pulls: u64,
    cap: u64,
}

impl<F: FnMut(&mut Stream) -> Result<bool>> Counted<'_, F> {
    fn pull(&mut self, rng: &mut Stream) -> Result<bool> {
        if self.pulls >= self.cap {
            return Err(SdeError::BudgetExhausted {
                stage: StageTag::Factory,
                spent: self.pulls,
                last_eps: f64::NAN,
            });
        }
        self.pulls += 1;
        (self.coin)(rng)
    }

    /// Bernoulli(cp / (1 + cp)).
    fn logistic(&mut self, c: f64, rng: &mut Stream) -> Result<bool> {
        let q = c / (1.0 + c);
        loop {
            if !rng.bernoulli(q) {
                return Ok(false);
            }
            if self.pull(rng)? {
                return Ok(true);
            }
        }
    }
}

/// One Bernoulli(αp) flip. The caller guarantees αp ≤ 1 − ε.
pub fn flip_linear<F>(coin: &mut F, spec: FactorySpec, rng: &mut Stream, cap: u64) -> Result<Flip>
where
    F: FnMut(&mut Stream) -> Result<bool>,
{
    let mut c = Counted { coin, pulls: 0, cap };
    if spec.alpha <= 1.0 {
        let bit = rng.bernoulli(spec.alpha) && c.pull(rng)?;
        return Ok(Flip { bit, pulls: c.pulls });
    }
    let mut alpha = spec.alpha;
    let mut eps = spec.eps;
    let mut i: u64 = 1;
    loop {
        let k = (2.3 / (GAMMA * eps)).ceil() as u64;
        while i != 0 && i < k {
            if c.logistic(alpha, rng)? {
                i -= 1;
            } else {
                i += 1;
            }
        }
        if i == 0 {
            return Ok(Flip { bit: true, pulls: c.pulls });
        }
        let gear = 1.0 + GAMMA * eps;
        if !rng.bernoulli(gear.powf(-(i as f64))) {
            return Ok(Flip { bit: false, pulls: c.pulls });
        }
        alpha *= gear;
        eps = 1.0 - (1.0 - eps) * gear;
    }
}

/// Factory on an event indicator with `f(p) = min(c·p, 1/2)`; the caller's
/// bound guarantees `c·p ≤ 1/2`.
pub fn flip_scaled_indicator<F>(event: &mut F, scale: f64, rng: &mut Stream, cap: u64) -> Result<Flip>
where
    F: FnMut(&mut Stream) -> Result<bool>,
{
    flip_linear(event, FactorySpec::new(scale, 0.5)?, rng, cap)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::binomial_test;

    fn run(alpha: f64, p: f64, n: u64, seed: u64) -> (u64, f64) {
        let mut rng = Stream::from_seed(seed);
        let mut coin = |r: &mut Stream| Ok(r.bernoulli(p));
        let spec = FactorySpec::new(alpha, 0.5).unwrap();
        let mut ones = 0;
        let mut pulls = 0;
        for _ in 0..n {
            let f = flip_linear(&mut coin, spec, &mut rng, DEFAULT_PULL_CAP).unwrap();
            ones += f.bit as u64;
            pulls += f.pulls;
        }
        (ones, pulls as f64 / n as f64)
    }

    #[test]
    fn identity_factory_is_the_coin() {
        let (ones, pulls) = run(1.0, 0.3, 20_000, 1);
        assert!(binomial_test(ones, 20_000, 0.3).passes(0.01));
        assert!(pulls <= 1.0);
    }

    #[test]
    fn doubling() {
        let (ones, _) = run(2.0, 0.2, 100_000, 2);
        assert!(binomial_test(ones, 100_000, 0.4).passes(0.01));
    }

    #[test]
    fn pull_bound() {
        let (ones, pulls) = run(3.0, 0.16, 20_000, 3);
        assert!(pulls <= 60.0, "{pulls}");
        assert!(binomial_test(ones, 20_000, 0.48).passes(0.01));
    }

    #[test]
    fn scaled_indicator_degenerate() {
        let mut rng = Stream::from_seed(4);
        let mut never = |_: &mut Stream| Ok(false);
        for _ in 0..100 {
            assert!(!flip_scaled_indicator(&mut never, 4.0, &mut rng, 1000).unwrap().bit);
        }
        let mut always = |_: &mut Stream| Ok(true);
        let ones = (0..20_000)
            .filter(|_| flip_scaled_indicator(&mut always, 0.3, &mut rng, 1000).unwrap().bit)
            .count();
        assert!(binomial_test(ones as u64, 20_000, 0.3).passes(0.01));
    }

    #[test]
    fn cap_is_a_budget_error() {
        let mut rng = Stream::from_seed(5);
        let mut coin = |r: &mut Stream| Ok(r.bernoulli(0.1));
        let r = flip_linear(&mut coin, FactorySpec::new(4.0, 0.5).unwrap(), &mut rng, 0);
        assert!(r.unwrap_err().is_budget());
    }

    #[test]
    fn deterministic() {
        assert_eq!(run(2.5, 0.1, 50, 9), run(2.5, 0.1, 50, 9));
    }
}
