//! Dyadic Brownian skeleton with almost-sure bridge deviation certificates.
//!
//! The path on [0, 1] is built level by level from the Lévy–Ciesielski
//! expansion: level `n` fills the midpoints of the `2^n` segments of width
//! `2^-n` with `mid = chord + 2^{-n/2-1} Z_{n,k}`. For each coordinate we first
//! draw `K`, the last level at which some `|Z_{n,k}|` exceeds `t_n = c √(n+1)`,
//! from its exact law. Levels above `K` are then sampled from normals
//! truncated to `[-t_n, t_n]`, level `K` is conditioned on at least one
//! exceedance and lower levels are unconditioned. Past level `K` the deviation
//! of every segment's bridge from its chord is therefore bounded by
//! `R(ℓ) = Σ_{n≥ℓ} t_n 2^{-n/2-1}` for all later refinements, which is the
//! per-segment certificate.

use statrs::function::erf::erfc;

use crate::rng::Stream;

/// Threshold multiplier `c` in `t_n = c √(n+1)`.
pub const TRUNC_C: f64 = 2.0;
const MAX_TRACKED_LEVEL: usize = 96;

pub fn threshold(level: u32) -> f64 {
    TRUNC_C * ((level + 1) as f64).sqrt()
}

/// `P(|Z| > t_n)`.
fn exceed_prob(level: u32) -> f64 {
    erfc(threshold(level) / std::f64::consts::SQRT_2)
}

/// `log P(no exceedance among the 2^n coefficients of level n)`.
fn log_clean(level: u32) -> f64 {
    (level as f64 * std::f64::consts::LN_2).exp() * (-exceed_prob(level)).ln_1p()
}

/// `T_m = P(no exceedance at any level ≥ m)` for `m = 0..=MAX_TRACKED_LEVEL`.
fn tail_clean_table() -> &'static [f64] {
    use std::sync::OnceLock;
    static TABLE: OnceLock<Vec<f64>> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut logs = vec![0.0; MAX_TRACKED_LEVEL + 2];
        for m in (0..=MAX_TRACKED_LEVEL).rev() {
            logs[m] = logs[m + 1] + log_clean(m as u32);
        }
        logs.iter().map(|l| l.exp()).collect()
    })
}

/// Probability that no coefficient at level ≥ `m` exceeds its threshold.
pub fn clean_from(m: u32) -> f64 {
    let t = tail_clean_table();
    t[(m as usize).min(t.len() - 1)]
}

/// Draw the last exceedance level, `-1` when there is none.
pub fn sample_last_exceedance(rng: &mut Stream) -> i32 {
    let t = tail_clean_table();
    let u = rng.uniform();
    for (j, tj) in t.iter().enumerate() {
        if u <= *tj {
            return j as i32 - 1;
        }
    }
    MAX_TRACKED_LEVEL as i32
}

/// `R(ℓ)`: sup-deviation bound of any bridge at grid level `ℓ` (one coordinate).
pub fn deviation_bound(level: u32) -> f64 {
    let mut s = 0.0;
    for n in level..level + 400 {
        let term = threshold(n) * (-(n as f64) / 2.0 - 1.0).exp2();
        s += term;
        if term < s * 1e-17 {
            break;
        }
    }
    s
}

fn truncated_normal(t: f64, rng: &mut Stream) -> f64 {
    loop {
        let z = rng.normal();
        if z.abs() <= t {
            return z;
        }
    }
}

/// Normal conditioned on `|Z| > t` (exponential-proposal tail sampler).
fn tail_normal(t: f64, rng: &mut Stream) -> f64 {
    let mag = loop {
        let x = -rng.uniform().ln() / t;
        let y = -rng.uniform().ln();
        if 2.0 * y > x * x {
            break t + x;
        }
    };
    if rng.uniform() < 0.5 {
        -mag
    } else {
        mag
    }
}

/// Index of the first exceedance among `count` coefficients given at least one.
fn first_exceedance(q: f64, count: usize, rng: &mut Stream) -> usize {
    // Truncated geometric by inverse CDF: P(J ≤ j) = (1 - (1-q)^{j+1}) / (1 - (1-q)^count).
    let l1q = (-q).ln_1p();
    let total = -(count as f64 * l1q).exp_m1();
    let u = rng.uniform() * total;
    let j = ((-u).ln_1p() / l1q).ceil() as i64 - 1;
    j.clamp(0, count as i64 - 1) as usize
}

/// One coordinate-block of a d-dimensional Brownian path on [0, 1].
#[derive(Debug, Clone)]
pub struct BrownianSkeleton {
    level: u32,
    values: Vec<Vec<f64>>,
    last_exceedance: Vec<i32>,
    rng: Stream,
}

impl BrownianSkeleton {
    pub fn new(dim: usize, mut rng: Stream) -> Self {
        let last_exceedance = (0..dim).map(|_| sample_last_exceedance(&mut rng)).collect();
        let values = (0..dim).map(|_| vec![0.0, rng.normal()]).collect();
        BrownianSkeleton {
            level: 0,
            values,
            last_exceedance,
            rng,
        }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn level(&self) -> u32 {
        self.level
    }

    pub fn segments(&self) -> usize {
        1usize << self.level
    }

    pub fn step(&self) -> f64 {
        (-(self.level as f64)).exp2()
    }

    /// Grid values of coordinate `i` at times `k 2^-ℓ`.
    pub fn coord(&self, i: usize) -> &[f64] {
        &self.values[i]
    }

    pub fn terminal(&self) -> Vec<f64> {
        self.values.iter().map(|v| v[v.len() - 1]).collect()
    }

    pub fn last_exceedance(&self) -> &[i32] {
        &self.last_exceedance
    }

    /// Lowest level at which the deviation certificate holds.
    pub fn certified_from(&self) -> u32 {
        (self.last_exceedance.iter().copied().max().unwrap_or(-1) + 1) as u32
    }

    /// Euclidean sup-deviation bound of the bridges at the current level.
    pub fn deviation_certificate(&self) -> Option<f64> {
        if self.level < self.certified_from() {
            return None;
        }
        Some(deviation_bound(self.level) * (self.dim() as f64).sqrt())
    }

    /// Probability of the conditioning event on levels at or above the
    /// current one, used to turn unconditional tail bounds into conditional ones.
    pub fn conditioning_mass(&self) -> f64 {
        let from = self.level.max(self.certified_from());
        clean_from(from).powi(self.dim() as i32)
    }

    /// Add one dyadic level.
    pub fn refine(&mut self) {
        let n = self.level;
        let scale = (-(n as f64) / 2.0 - 1.0).exp2();
        let t = threshold(n);
        let count = 1usize << n;
        for i in 0..self.values.len() {
            let k_last = self.last_exceedance[i];
            let first = if n as i32 == k_last {
                Some(first_exceedance(exceed_prob(n), count, &mut self.rng))
            } else {
                None
            };
            let old = &self.values[i];
            let mut new = Vec::with_capacity(2 * count + 1);
            for k in 0..count {
                let z = match first {
                    _ if (n as i32) < k_last => self.rng.normal(),
                    Some(j) if k < j => truncated_normal(t, &mut self.rng),
                    Some(j) if k == j => tail_normal(t, &mut self.rng),
                    Some(_) => self.rng.normal(),
                    None => truncated_normal(t, &mut self.rng),
                };
                new.push(old[k]);
                new.push(0.5 * (old[k] + old[k + 1]) + scale * z);
            }
            new.push(old[count]);
            self.values[i] = new;
        }
        self.level += 1;
    }

    pub fn refine_to(&mut self, level: u32) {
        while self.level < level {
            self.refine();
        }
    }
}

/// CDF of `sup |B|` for a standard Brownian bridge on [0, 1] (Kolmogorov law),
/// with the alternating series truncated once terms fall below 1e-12 relative.
pub fn bridge_sup_abs_cdf(x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x < 0.3 {
        // Dual (Jacobi) series converges fast for small x.
        let c = (2.0 * std::f64::consts::PI).sqrt() / x;
        let mut s = 0.0;
        for k in 1..200 {
            let kk = (2 * k - 1) as f64;
            let term = (-(kk * kk) * std::f64::consts::PI.powi(2) / (8.0 * x * x)).exp();
            s += term;
            if term <= 1e-12 * s {
                break;
            }
        }
        return c * s;
    }
    let mut s = 0.0;
    for k in 1..200 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * x * x).exp();
        s += if k % 2 == 1 { term } else { -term };
        if term <= 1e-12 * s.abs().max(1e-300) {
            break;
        }
    }
    (1.0 - 2.0 * s).clamp(0.0, 1.0)
}

/// Sample `sup_{t≤h} |B_t|` for a Brownian bridge of duration `h` pinned at 0,
/// by inverse CDF.
pub fn sample_bridge_sup_abs(h: f64, rng: &mut Stream) -> f64 {
    let u = rng.uniform();
    let (mut lo, mut hi) = (0.0, 1.0);
    while bridge_sup_abs_cdf(hi) < u {
        hi *= 2.0;
    }
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if bridge_sup_abs_cdf(mid) < u {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-14 * hi {
            break;
        }
    }
    0.5 * (lo + hi) * h.sqrt()
}
