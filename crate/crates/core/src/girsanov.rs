//! Exact sampling for constant-diffusion models with linear drift by
//! thinning the Brownian reference with the Girsanov density.
//!
//! Stage one draws a path from the target and localizes `L(1)` in a unit band
//! `[i, i+1)`. Stage two draws reference paths and accepts when
//! `max(i, u) ≤ L(1) < i + 1` for `u ~ U(0, i+1)`.

use nalgebra::DVector;

use crate::error::{Result, SdeError, StageTag};
use crate::likelihood::{whiten, LikelihoodFunctional, LikelihoodHandle, WhitenedLinear};
use crate::model::SdeSpec;
use crate::rng::{substream, Stage, Stream};
use crate::tes::Caps;

pub const MAX_ATTEMPTS: u64 = 100_000;

#[derive(Debug, Clone, PartialEq)]
pub struct SampleRecord {
    pub value: Vec<f64>,
    pub eps_out: f64,
    pub band: i64,
    pub attempts: u64,
    pub aborted: u64,
    /// Deepest skeleton level used by the accepted path.
    pub depth: u32,
}

#[derive(Debug, Clone)]
pub struct GirsanovSampler {
    sys: WhitenedLinear,
    target: LikelihoodFunctional,
    reference: LikelihoodFunctional,
    pub caps: Caps,
    pub max_attempts: u64,
}

impl GirsanovSampler {
    pub fn new(spec: &SdeSpec, caps: Caps) -> Result<Self> {
        if (spec.horizon - 1.0).abs() > 1e-12 {
            return Err(SdeError::Capability("the sampler works on the unit horizon".into()));
        }
        let sys = whiten(spec)?;
        let target = LikelihoodFunctional::target(&sys)?;
        let reference = LikelihoodFunctional::reference(&sys);
        Ok(GirsanovSampler {
            sys,
            target,
            reference,
            caps,
            max_attempts: MAX_ATTEMPTS,
        })
    }

    fn unwhiten(&self, z: &DVector<f64>) -> Vec<f64> {
        match &self.sys.whitening {
            Some(w) => (&w.inverse * z).iter().copied().collect(),
            None => z.iter().copied().collect(),
        }
    }

    /// Stage one: the band index of `L(1)` along a target path. Budget
    /// failures keep the localization tag.
    pub fn localize_band(&self, rng: Stream) -> Result<i64> {
        let mut h = LikelihoodHandle::new(self.target.clone(), rng, self.caps);
        h.locate(|l| l.floor() as i64)
    }

    /// Stage two: a reference path accepted with probability proportional to
    /// `L(1) 1{L(1) ∈ [i, i+1)}`.
    pub fn sample_conditional(&self, band: i64, rng: &mut Stream) -> Result<SampleRecord> {
        let top = (band + 1) as f64;
        let mut aborted = 0;
        for attempt in 1..=self.max_attempts {
            let u = top * rng.uniform();
            let lo = u.max(band as f64);
            let mut h = LikelihoodHandle::new(self.reference.clone(), rng.fork(), self.caps);
            match h.locate(|l| (l >= lo) as i64 + (l >= top) as i64) {
                Ok(1) => {
                    return Ok(SampleRecord {
                        value: self.unwhiten(&h.terminal_state()),
                        eps_out: 0.0,
                        band,
                        attempts: attempt,
                        aborted,
                        depth: h.level(),
                    })
                }
                Ok(_) => {}
                Err(SdeError::BudgetExhausted { .. }) => aborted += 1,
                Err(e) => return Err(e),
            }
        }
        Err(SdeError::BudgetExhausted {
            stage: StageTag::Conditional,
            spent: self.max_attempts,
            last_eps: f64::NAN,
        })
    }

    /// One draw of `X(1)` within `eps_out`. The terminal state is exact, so
    /// any positive tolerance is met.
    pub fn sample(&self, seed: u64, index: u64, eps_out: f64) -> Result<SampleRecord> {
        if !(eps_out > 0.0) {
            return Err(SdeError::Contract(format!("eps_out must be positive, got {eps_out}")));
        }
        let band = self.localize_band(substream(seed, index, Stage::Band))?;
        let mut rng = substream(seed, index, Stage::Conditional);
        let mut rec = self.sample_conditional(band, &mut rng)?;
        rec.eps_out = eps_out;
        Ok(rec)
    }
}
