//! Randomized multilevel estimator of the transition density and its
//! nonnegative surrogate.
//!
//! With radii `r_n = 3δ/(2π² n³ C)` and `p̂_k(x) = I(X(1) ∈ B_{r_k}(x)) / V(r_k)`,
//! `Λ_n(x) = p̂_1 + Σ_{k=1}^n k (p̂_{k+1} − p̂_k)` and `p(x) = E[Λ_N(x)]` for
//! `P(N = n) = 1/(n(n+1))`. `Λ_n⁺` thins the stopped Wald ladder by a
//! Bernoulli(1/E[τ]) coin drawn through acceptance/rejection on `T′`.

use std::f64::consts::PI;

use serde::Serialize;
use statrs::function::gamma::gamma;

use crate::constants::{compute_lipschitz, compute_lower_bound, ConstantInputs, LipschitzLedger, LowerBoundLedger, SetDescriptor};
use crate::error::{Result, SdeError, StageTag};
use crate::factory::{flip_linear, FactorySpec};
use crate::localize::Partition;
use crate::model::SdeSpec;
use crate::rng::Stream;
use crate::source::TerminalSource;

/// `π^{d/2} r^d / Γ(d/2 + 1)`.
pub fn ball_volume(d: usize, r: f64) -> f64 {
    let h = d as f64 / 2.0;
    PI.powf(h) * r.powi(d as i32) / gamma(h + 1.0)
}

/// `N = floor(1/U)`, so `P(N ≥ n) = 1/n`.
pub fn level_from_uniform(u: f64) -> u64 {
    (1.0 / u).floor() as u64
}

pub fn sample_level(rng: &mut Stream) -> u64 {
    level_from_uniform(rng.uniform())
}

pub fn level_pmf(n: u64) -> f64 {
    1.0 / (n as f64 * (n as f64 + 1.0))
}

/// `Σ_{k>K} 1/k²`.
pub fn inverse_square_tail(k: u64) -> f64 {
    if k < 20 {
        PI * PI / 6.0 - (1..=k).map(|j| 1.0 / (j as f64 * j as f64)).sum::<f64>()
    } else {
        let x = k as f64;
        1.0 / x - 1.0 / (2.0 * x * x) + 1.0 / (6.0 * x.powi(3)) - 1.0 / (30.0 * x.powi(5))
    }
}

/// `T′` with `P(T′ = k) = 6/(π²k²)`, by thinning `floor(1/U)`.
pub fn sample_t_prime(rng: &mut Stream) -> u64 {
    loop {
        let y = level_from_uniform(rng.uniform());
        if rng.uniform() * 2.0 * y as f64 <= (y + 1) as f64 {
            return y;
        }
    }
}

/// `T′` conditioned on `T′ > k0`.
fn sample_t_prime_tail(k0: u64, rng: &mut Stream) -> u64 {
    let top = 1.0 / (k0 as f64 + 1.0);
    let bound = (k0 as f64 + 2.0) / (k0 as f64 + 1.0);
    loop {
        let y = (1.0 / (top * rng.uniform())).floor().max(k0 as f64 + 1.0);
        if rng.uniform() * bound * y <= y + 1.0 {
            return y as u64;
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ScheduleLedger {
    pub provisional: (LowerBoundLedger, LipschitzLedger),
    pub final_pass: (LowerBoundLedger, LipschitzLedger),
}

/// Radii, level law and the bounds `m_n`, `m_{τ,n}` for one cell.
#[derive(Debug, Clone, Serialize)]
pub struct Schedule {
    pub d: usize,
    /// `δ_{G_{i,r₁}}`.
    pub delta: f64,
    /// `C_{G_{i,r₁}}`.
    pub c_local: f64,
    /// Constants the radii are computed from; at most as permissive as
    /// `(delta, c_local)`.
    pub radius_delta: f64,
    pub radius_c: f64,
    pub ledger: Option<ScheduleLedger>,
}

impl Schedule {
    pub fn from_constants(d: usize, delta: f64, c_local: f64) -> Result<Self> {
        if !(delta > 0.0 && c_local > 0.0 && delta.is_finite() && c_local.is_finite()) {
            return Err(SdeError::Config(format!("schedule needs positive δ and C, got {delta}, {c_local}")));
        }
        Ok(Schedule {
            d,
            delta,
            c_local,
            radius_delta: delta,
            radius_c: c_local,
            ledger: None,
        })
    }

    /// Radii from the provisional `(δ, C)`, bounds from the final pair. The
    /// final pair must be at least as tight: `δ ≥ δ_radius`, `C ≤ C_radius`.
    pub fn two_pass(d: usize, radius: (f64, f64), last: (f64, f64)) -> Result<Self> {
        let mut s = Schedule::from_constants(d, last.0, last.1)?;
        if !(radius.0 > 0.0 && radius.1 > 0.0 && radius.0 <= last.0 && radius.1 >= last.1) {
            return Err(SdeError::Config(format!(
                "provisional constants {radius:?} must be looser than the final {last:?}"
            )));
        }
        (s.radius_delta, s.radius_c) = radius;
        Ok(s)
    }

    /// Constants over the unit cube `cell` from the appendix bounds, by the
    /// two-pass sweep: the provisional pass over the cube enlarged by 1 fixes
    /// the radii, the final pass over the cube enlarged by `r₁` gives δ and C.
    pub fn resolve(spec: &SdeSpec, cell: &[i64], eps: f64) -> Result<Self> {
        let b = &spec.bounds;
        let inputs = ConstantInputs {
            m: b.m_bound,
            lambda_down: b.lambda_down,
            lambda_up: b.lambda_up,
            d: spec.dim_state,
            t: spec.horizon,
            eps,
        };
        let pass = |r: f64| -> Result<(LowerBoundLedger, LipschitzLedger)> {
            let set = SetDescriptor::enlarged_cube(cell, r);
            let lo = compute_lower_bound(&set, &spec.x0, &inputs)?;
            let li = compute_lipschitz(&inputs, set.inf_dist(&spec.x0))?;
            Ok((lo, li))
        };
        let first = pass(1.0)?;
        let log_r1 = (3.0f64).ln() + first.0.log_delta_s - (2.0 * PI * PI * first.1.c_s).ln();
        let r1 = log_r1.exp();
        if !(r1 > 0.0) || !(first.1.c_s > 0.0) {
            return Err(SdeError::Overflow("radius r1 = 3δ/(2π²C) is not representable"));
        }
        let second = pass(r1.min(1.0))?;
        if !(second.0.delta_s > 0.0) {
            return Err(SdeError::Overflow("δ over the enlarged cell underflows"));
        }
        Ok(Schedule {
            d: spec.dim_state,
            delta: second.0.delta_s,
            c_local: second.1.c_s,
            radius_delta: first.0.delta_s,
            radius_c: first.1.c_s,
            ledger: Some(ScheduleLedger {
                provisional: first,
                final_pass: second,
            }),
        })
    }

    pub fn radius(&self, n: u64) -> f64 {
        3.0 * self.radius_delta / (2.0 * PI * PI * (n as f64).powi(3) * self.radius_c)
    }

    /// `a_n = 1/V(r_n)`.
    pub fn inv_volume(&self, n: u64) -> f64 {
        1.0 / ball_volume(self.d, self.radius(n))
    }

    pub fn m_bound(&self, n: u64) -> f64 {
        let mut m = self.inv_volume(1);
        for k in 1..=n {
            m += k as f64 * (self.inv_volume(k + 1) + self.inv_volume(k));
        }
        m
    }

    pub fn m_tau(&self, n: u64) -> f64 {
        let m = self.m_bound(n);
        (2.0 * m * m + m * m * m) / (self.delta / 2.0).powi(3)
    }

    /// Scale of the Algorithm 4 factory per `k²`.
    pub fn ladder_scale(&self, n: u64) -> f64 {
        self.delta / (4.0 * (1.0 + self.delta / 2.0) * self.m_tau(n))
    }

    /// `Λ_n` when `X(1)` lies in exactly `depth` of the balls `B_{r_1} ⊃ … ⊃ B_{r_{n+1}}`.
    pub fn lambda_value(&self, n: u64, depth: u64) -> f64 {
        let p = |k: u64| if depth >= k { self.inv_volume(k) } else { 0.0 };
        let mut v = p(1);
        for k in 1..=n {
            v += k as f64 * (p(k + 1) - p(k));
        }
        v
    }

    /// `lambda_value(n, j)` for `j = 0..=n+1` in linear time: the depth-`j`
    /// value is `−Σ_{k=2}^{min(j,n)} a_k`, plus `n a_{n+1}` at full depth.
    pub fn lambda_table(&self, n: u64) -> Vec<f64> {
        let mut out = Vec::with_capacity(n as usize + 2);
        let mut acc = 0.0;
        out.push(0.0);
        for j in 1..=n {
            if j >= 2 {
                acc -= self.inv_volume(j);
            }
            out.push(acc);
        }
        out.push(acc + n as f64 * self.inv_volume(n + 1));
        out
    }

    pub fn min_lambda(&self, n: u64) -> f64 {
        (0..=n + 1).map(|j| self.lambda_value(n, j)).fold(f64::INFINITY, f64::min)
    }

    pub fn partition(&self, n: u64, x: &[f64]) -> Partition {
        Partition::NestedBalls {
            center: x.to_vec(),
            radii: (1..=n + 1).map(|k| self.radius(k)).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LambdaSample {
    pub value: f64,
    pub level: u64,
    pub point: Vec<f64>,
    /// `I(X(1) ∈ B_{r_k}(x))` for `k = 1..=n+1`.
    pub bits: Vec<bool>,
}

/// Draws of `Λ_n(x)` sharing one precomputed partition and value table.
pub struct LambdaSampler<'a> {
    pub schedule: &'a Schedule,
    pub n: u64,
    pub x: Vec<f64>,
    source: &'a TerminalSource,
    partition: Partition,
    values: Vec<f64>,
}

impl<'a> LambdaSampler<'a> {
    pub fn new(schedule: &'a Schedule, n: u64, x: &[f64], source: &'a TerminalSource) -> Self {
        LambdaSampler {
            schedule,
            n,
            x: x.to_vec(),
            source,
            partition: schedule.partition(n, x),
            values: schedule.lambda_table(n),
        }
    }

    pub fn sample(&self, rng: &mut Stream) -> Result<LambdaSample> {
        let out = self.source.locate(&self.partition, rng)?;
        let depth = out.cell[0] as usize;
        Ok(LambdaSample {
            value: self.values[depth],
            level: self.n,
            point: self.x.clone(),
            bits: (1..=self.n as usize + 1).map(|k| depth >= k).collect(),
        })
    }

    pub fn draw(&self, rng: &mut Stream) -> Result<f64> {
        let out = self.source.locate(&self.partition, rng)?;
        Ok(self.values[out.cell[0] as usize])
    }

    pub fn nonnegative(&self) -> bool {
        self.values.iter().all(|v| *v >= 0.0)
    }

    pub fn m_bound(&self) -> f64 {
        self.schedule.m_bound(self.n)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LadderState {
    pub sums: Vec<f64>,
    pub tau: u64,
    pub s_tau: f64,
}

pub const DEFAULT_PULL_CAP: u64 = 1_000_000;

/// i.i.d. draws until the first nonnegative partial sum.
pub fn sample_ladder<F>(draw: &mut F, rng: &mut Stream, cap: u64) -> Result<LadderState>
where
    F: FnMut(&mut Stream) -> Result<f64>,
{
    let mut sums = Vec::new();
    let mut s = 0.0;
    loop {
        if sums.len() as u64 >= cap {
            return Err(SdeError::BudgetExhausted {
                stage: StageTag::Ladder,
                spent: cap,
                last_eps: f64::NAN,
            });
        }
        s += draw(rng)?;
        sums.push(s);
        if s >= 0.0 {
            return Ok(LadderState {
                tau: sums.len() as u64,
                s_tau: s,
                sums,
            });
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LambdaPlus {
    pub value: f64,
    /// Proposals of `T′`, including rounds settled without touching a coin.
    pub rounds: u64,
    pub work_rounds: u64,
    /// Draws of `Λ_n`.
    pub pulls: u64,
    pub accepted_k: u64,
}

/// Parameters of Algorithm 4 for one `(n, x)`.
#[derive(Debug, Clone, Copy)]
pub struct LadderThinning {
    /// `δ / (4(1 + δ/2) m_{τ,n})`.
    pub scale: f64,
    pub m_bound: f64,
    /// Every `Λ_n` value is nonnegative, so `τ ≡ 1` and `Λ_n⁺ = Λ_n`.
    pub nonnegative: bool,
    pub cap: u64,
}

/// Algorithm 4 over an arbitrary `Λ_n` draw.
///
/// Rounds where the `T′ = k ≤ 1/√scale` proposal is rejected by the
/// `Bern(scale·k²)` half of the factory never touch the coin; they are
/// skipped exactly and only counted.
pub fn lambda_plus_with<F>(draw: &mut F, p: LadderThinning, rng: &mut Stream) -> Result<LambdaPlus>
where
    F: FnMut(&mut Stream) -> Result<f64>,
{
    let check = |v: f64| -> Result<f64> {
        if v < 0.0 || v > p.m_bound * (1.0 + 1e-12) {
            return Err(SdeError::NumericalIntegrity(format!("Λ⁺ = {v} outside [0, {}]", p.m_bound)));
        }
        Ok(v)
    };
    if p.nonnegative {
        let v = check(draw(rng)?)?;
        return Ok(LambdaPlus {
            value: v,
            rounds: 1,
            work_rounds: 0,
            pulls: 1,
            accepted_k: 1,
        });
    }
    let c = p.scale;
    if !(c > 0.0) {
        return Err(SdeError::Overflow("Algorithm 4 scale δ/(4(1+δ/2)m_τ) underflows"));
    }
    let k0 = (1.0 / c.sqrt()).floor().min(1e18) as u64;
    let low = 6.0 / (PI * PI) * c * k0 as f64;
    let high = 6.0 / (PI * PI) * inverse_square_tail(k0);
    let work = (low + high).min(1.0);
    let mut pulls = 0u64;
    let mut rounds = 0u64;
    let mut work_rounds = 0u64;
    loop {
        if work < 1.0 {
            let skipped = (rng.uniform().ln() / (-work).ln_1p()).floor();
            rounds = rounds.saturating_add(skipped.min(u64::MAX as f64) as u64);
        }
        rounds = rounds.saturating_add(1);
        work_rounds += 1;
        if work_rounds > p.cap {
            return Err(SdeError::BudgetExhausted {
                stage: StageTag::LambdaPlus,
                spent: work_rounds,
                last_eps: f64::NAN,
            });
        }
        let (k, gamma) = if rng.uniform() * (low + high) < low {
            let k = 1 + ((rng.uniform() * k0 as f64) as u64).min(k0 - 1);
            (k, tau_at_least(draw, k, rng, &mut pulls, p.cap)?)
        } else {
            let k = sample_t_prime_tail(k0, rng);
            let alpha = c * (k as f64) * (k as f64);
            let mut coin = |r: &mut Stream| tau_at_least(draw, k, r, &mut pulls, p.cap);
            let flip = flip_linear(&mut coin, FactorySpec::new(alpha, 0.5)?, rng, u64::MAX)?;
            (k, flip.bit)
        };
        if gamma {
            let value = if k == 1 {
                let budget = p.cap.saturating_sub(pulls).max(1);
                let l = sample_ladder(draw, rng, budget)?;
                pulls += l.tau;
                check(l.s_tau)?
            } else {
                0.0
            };
            return Ok(LambdaPlus {
                value,
                rounds,
                work_rounds,
                pulls,
                accepted_k: k,
            });
        }
    }
}

/// `I(τ ≥ k)`: true when the first `k − 1` partial sums stay negative.
fn tau_at_least<F>(draw: &mut F, k: u64, rng: &mut Stream, pulls: &mut u64, cap: u64) -> Result<bool>
where
    F: FnMut(&mut Stream) -> Result<f64>,
{
    let mut s = 0.0;
    for _ in 1..k {
        if *pulls >= cap {
            return Err(SdeError::BudgetExhausted {
                stage: StageTag::LambdaPlus,
                spent: *pulls,
                last_eps: f64::NAN,
            });
        }
        *pulls += 1;
        s += draw(rng)?;
        if s >= 0.0 {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Algorithm 4 for `Λ_n(x)` of a model.
pub fn sample_lambda_plus(s: &LambdaSampler<'_>, rng: &mut Stream, cap: u64) -> Result<LambdaPlus> {
    let n = s.n;
    let p = LadderThinning {
        scale: s.schedule.ladder_scale(n),
        m_bound: s.m_bound(),
        nonnegative: s.nonnegative(),
        cap,
    };
    if p.scale * s.schedule.m_tau(n) > 0.5 {
        return Err(SdeError::Contract("factory clamp times worst-case coin exceeds 1/2".into()));
    }
    let mut draw = |r: &mut Stream| s.draw(r);
    lambda_plus_with(&mut draw, p, rng)
}
