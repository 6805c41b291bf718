//! Exact sampling of `X(1)` for general SDEs: localize the unit cube, draw
//! the ancillary level `N′` given the cube, then `X(1)` given both.
//!
//! The `Λ_n⁺` draws are injected through [`LambdaPlusFamily`] so the two
//! acceptance/rejection stages can run on a synthetic family with known
//! means as well as on the model's multilevel estimator.

use std::collections::HashMap;
use std::sync::Arc;

use serde::Serialize;

use crate::error::{Result, SdeError, StageTag};
use crate::factory::{flip_linear, FactorySpec};
use crate::localize::Partition;
use crate::model::SdeSpec;
use crate::multilevel::{sample_lambda_plus, sample_level, LambdaSampler, Schedule};
use crate::rng::{substream, Stage, Stream};
use crate::source::TerminalSource;
use crate::tes::Caps;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GeneralCaps {
    /// Proposals per acceptance/rejection loop.
    pub attempts: u64,
    /// Coin pulls per factory flip.
    pub factory_pulls: u64,
    /// `Λ_n` draws per `Λ_n⁺` emission.
    pub lambda_pulls: u64,
}

impl Default for GeneralCaps {
    fn default() -> Self {
        GeneralCaps {
            attempts: 100_000,
            factory_pulls: 1_000_000,
            lambda_pulls: 1_000_000,
        }
    }
}

/// One `Λ_n⁺(x)` emission with its cost.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LambdaDraw {
    pub value: f64,
    pub pulls: u64,
}

/// A family `{Λ_n⁺(x)}` on one cube.
pub trait LambdaPlusFamily {
    fn dim(&self) -> usize;
    /// `m_n`: every emission lies in `[0, m_n]`.
    fn m_bound(&self, n: u64) -> f64;
    /// Upper bound on `sup_x E[Λ_n⁺(x)]` over all `n`; `1 + δ/2` for the model.
    fn mean_bound(&self) -> f64;
    fn draw(&self, n: u64, x: &[f64], rng: &mut Stream) -> Result<LambdaDraw>;
}

/// `Λ_n⁺` of a model through the multilevel estimator and Algorithm 4.
pub struct ModelFamily<'a> {
    pub schedule: &'a Schedule,
    pub source: &'a TerminalSource,
    pub lambda_pulls: u64,
}

impl LambdaPlusFamily for ModelFamily<'_> {
    fn dim(&self) -> usize {
        self.schedule.d
    }

    fn m_bound(&self, n: u64) -> f64 {
        self.schedule.m_bound(n)
    }

    fn mean_bound(&self) -> f64 {
        1.0 + self.schedule.delta / 2.0
    }

    fn draw(&self, n: u64, x: &[f64], rng: &mut Stream) -> Result<LambdaDraw> {
        let s = LambdaSampler::new(self.schedule, n, x, self.source);
        let l = sample_lambda_plus(&s, rng, self.lambda_pulls)?;
        Ok(LambdaDraw {
            value: l.value,
            pulls: l.pulls,
        })
    }
}

/// Counters shared by the two conditional stages.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct StageCost {
    pub attempts: u64,
    pub factory_pulls: u64,
    pub lambda_pulls: u64,
}

fn uniform_in_cube(cube: &[i64], rng: &mut Stream) -> Vec<f64> {
    cube.iter().map(|i| *i as f64 + rng.uniform()).collect()
}

fn check_range(v: f64, m: f64) -> Result<f64> {
    if !(0.0..=m * (1.0 + 1e-12)).contains(&v) {
        return Err(SdeError::NumericalIntegrity(format!("Λ⁺ = {v} outside [0, {m}]")));
    }
    Ok(v)
}

/// Algorithm 5: `N′` given `X(1) ∈ G_i`. Accepts `n` when the factory coin
/// `Γ_n(x)` comes up 1.
pub fn sample_n_prime<F: LambdaPlusFamily + ?Sized>(
    family: &F,
    cube: &[i64],
    caps: GeneralCaps,
    rng: &mut Stream,
    cost: &mut StageCost,
) -> Result<u64> {
    let bound = family.mean_bound();
    for _ in 0..caps.attempts {
        cost.attempts += 1;
        let n = sample_level(rng);
        let x = uniform_in_cube(cube, rng);
        let m = family.m_bound(n);
        let alpha = m / (2.0 * bound);
        // α · sup p = α · bound / m_n = 1/2.
        if !(alpha > 0.0 && alpha.is_finite()) || alpha * bound / m > 0.5 * (1.0 + 1e-12) {
            return Err(SdeError::Contract(format!("Γ factory scale {alpha} invalid at n = {n}")));
        }
        let mut lambda_pulls = 0u64;
        let mut coin = |r: &mut Stream| -> Result<bool> {
            let u = m * r.uniform();
            let l = family.draw(n, &x, r)?;
            lambda_pulls += l.pulls;
            Ok(u < check_range(l.value, m)?)
        };
        let flip = flip_linear(&mut coin, FactorySpec::new(alpha, 0.5)?, rng, caps.factory_pulls);
        cost.lambda_pulls += lambda_pulls;
        let flip = flip?;
        cost.factory_pulls += flip.pulls;
        if flip.bit {
            return Ok(n);
        }
    }
    Err(SdeError::BudgetExhausted {
        stage: StageTag::Level,
        spent: caps.attempts,
        last_eps: f64::NAN,
    })
}

/// Algorithm 6: `X(1)` given `N′ = n` and `X(1) ∈ G_i`.
pub fn sample_x_conditional<F: LambdaPlusFamily + ?Sized>(
    family: &F,
    cube: &[i64],
    n: u64,
    caps: GeneralCaps,
    rng: &mut Stream,
    cost: &mut StageCost,
) -> Result<Vec<f64>> {
    let m = family.m_bound(n);
    for _ in 0..caps.attempts {
        cost.attempts += 1;
        let x = uniform_in_cube(cube, rng);
        let u = m * rng.uniform();
        let l = family.draw(n, &x, rng)?;
        cost.lambda_pulls += l.pulls;
        if u <= check_range(l.value, m)? {
            return Ok(x);
        }
    }
    Err(SdeError::BudgetExhausted {
        stage: StageTag::Position,
        spent: caps.attempts,
        last_eps: f64::NAN,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GeneralRecord {
    pub value: Vec<f64>,
    pub eps_out: f64,
    pub cube: Vec<i64>,
    pub n_prime: u64,
    /// Refinements used to localize the cube.
    pub cube_refinements: u32,
    pub level: StageCost,
    pub position: StageCost,
}

impl GeneralRecord {
    pub fn factory_pulls(&self) -> u64 {
        self.level.factory_pulls + self.position.factory_pulls
    }

    pub fn lambda_pulls(&self) -> u64 {
        self.level.lambda_pulls + self.position.lambda_pulls
    }
}

pub type ScheduleFn = Arc<dyn Fn(&[i64]) -> Result<Schedule> + Send + Sync>;

/// Where the per-cube constants come from.
#[derive(Clone)]
pub enum ScheduleSource {
    /// The appendix bounds, resolved per cube.
    Appendix { eps: f64 },
    /// The same `δ` and `C` for every cube, supplied by the caller.
    Fixed { delta: f64, c_local: f64 },
    /// Caller-certified constants per cube.
    Custom(ScheduleFn),
}

/// Algorithm 3.
pub struct GeneralSampler {
    pub spec: SdeSpec,
    pub source: TerminalSource,
    pub caps: GeneralCaps,
    pub schedules: ScheduleSource,
    cache: HashMap<Vec<i64>, Schedule>,
}

impl GeneralSampler {
    pub fn new(spec: &SdeSpec, tes_caps: Caps, caps: GeneralCaps) -> Result<Self> {
        if (spec.horizon - 1.0).abs() > 1e-12 {
            return Err(SdeError::Capability("the sampler works on the unit horizon".into()));
        }
        Ok(GeneralSampler {
            spec: spec.clone(),
            source: TerminalSource::for_model(spec, tes_caps)?,
            caps,
            schedules: ScheduleSource::Appendix { eps: 0.5 },
            cache: HashMap::new(),
        })
    }

    pub fn with_schedules(mut self, schedules: ScheduleSource) -> Self {
        self.schedules = schedules;
        self.cache.clear();
        self
    }

    pub fn schedule(&mut self, cube: &[i64]) -> Result<&Schedule> {
        if !self.cache.contains_key(cube) {
            let s = match &self.schedules {
                ScheduleSource::Appendix { eps } => Schedule::resolve(&self.spec, cube, *eps)?,
                ScheduleSource::Fixed { delta, c_local } => Schedule::from_constants(self.spec.dim_state, *delta, *c_local)?,
                ScheduleSource::Custom(f) => f(cube)?,
            };
            self.cache.insert(cube.to_vec(), s);
        }
        Ok(&self.cache[cube])
    }

    /// Stage one: the unit cube holding `X(1)`.
    pub fn localize_cube(&self, rng: &mut Stream) -> Result<(Vec<i64>, u32)> {
        let out = self.source.locate(&Partition::HypercubeLattice, rng)?;
        Ok((out.cell, out.refinement_count))
    }

    /// One draw of `X(1)` within `eps_out`. The output point is exact.
    pub fn sample(&mut self, seed: u64, index: u64, eps_out: f64) -> Result<GeneralRecord> {
        self.sample_traced(seed, index, eps_out).0
    }

    /// As [`sample`](Self::sample), also returning the work spent: cube
    /// refinements, proposals, factory pulls and `Λ_n` draws, including
    /// those of a failed attempt.
    pub fn sample_traced(&mut self, seed: u64, index: u64, eps_out: f64) -> (Result<GeneralRecord>, u64) {
        let mut work = 0u64;
        let r = self.sample_inner(seed, index, eps_out, &mut work);
        if let Err(SdeError::BudgetExhausted { spent, .. }) = &r {
            work += spent;
        }
        (r, work)
    }

    fn sample_inner(&mut self, seed: u64, index: u64, eps_out: f64, work: &mut u64) -> Result<GeneralRecord> {
        if !(eps_out > 0.0) {
            return Err(SdeError::Contract(format!("eps_out must be positive, got {eps_out}")));
        }
        let (cube, cube_refinements) = self.localize_cube(&mut substream(seed, index, Stage::Cube))?;
        *work += 1 + cube_refinements as u64;
        let caps = self.caps;
        self.schedule(&cube)?;
        let family = ModelFamily {
            schedule: &self.cache[&cube],
            source: &self.source,
            lambda_pulls: caps.lambda_pulls,
        };
        let total = |c: &StageCost| c.attempts + c.factory_pulls + c.lambda_pulls;
        let mut level = StageCost::default();
        let mut position = StageCost::default();
        let n = sample_n_prime(&family, &cube, caps, &mut substream(seed, index, Stage::Level), &mut level);
        *work += total(&level);
        let n = n?;
        let value = sample_x_conditional(&family, &cube, n, caps, &mut substream(seed, index, Stage::Position), &mut position);
        *work += total(&position);
        Ok(GeneralRecord {
            value: value?,
            eps_out,
            cube,
            n_prime: n,
            cube_refinements,
            level,
            position,
        })
    }
}

/// Synthetic families for exercising Algorithms 5 and 6 without an SDE.
pub mod synthetic {
    use super::*;

    /// `Λ_n⁺(x) = m · Bern(g_n(x)/m)` on the unit cube at the origin, with a
    /// caller-supplied mean `g_n(x) ≤ bound ≤ m`.
    pub struct BernoulliFamily<G: Fn(u64, &[f64]) -> f64> {
        pub dim: usize,
        pub m: f64,
        pub bound: f64,
        pub mean: G,
    }

    impl<G: Fn(u64, &[f64]) -> f64> LambdaPlusFamily for BernoulliFamily<G> {
        fn dim(&self) -> usize {
            self.dim
        }

        fn m_bound(&self, _n: u64) -> f64 {
            self.m
        }

        fn mean_bound(&self) -> f64 {
            self.bound
        }

        fn draw(&self, n: u64, x: &[f64], rng: &mut Stream) -> Result<LambdaDraw> {
            let g = (self.mean)(n, x);
            if !(0.0..=self.bound).contains(&g) {
                return Err(SdeError::Contract(format!("synthetic mean {g} outside [0, {}]", self.bound)));
            }
            let value = if rng.bernoulli(g / self.m) { self.m } else { 0.0 };
            Ok(LambdaDraw { value, pulls: 1 })
        }
    }
}
