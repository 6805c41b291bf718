//! Draws of `X(1)` located in a partition cell, choosing the cheapest exact
//! route a model admits.

use nalgebra::{DMatrix, DVector};
use rand::RngCore;

use crate::error::Result;
use crate::girsanov::GirsanovSampler;
use crate::localize::{localize, LocalizationOutcome, Partition};
use crate::model::{DiffusionKind, SdeSpec};
use crate::rng::Stream;
use crate::tes::{self, Caps, Terminal, TerminalRefiner};

/// A terminal value known exactly, so every tolerance is met at once.
#[derive(Debug, Clone)]
pub struct ExactTerminal(pub Vec<f64>);

impl TerminalRefiner for ExactTerminal {
    fn terminal_within(&mut self, _eps: f64) -> Result<Terminal> {
        Ok(Terminal {
            value: self.0.clone(),
            certificate: 0.0,
            level: 0,
        })
    }
}

#[derive(Debug, Clone)]
pub enum TerminalSource {
    /// Driftless additive noise: `X(1) = x0 + Σ Z`.
    Gaussian { x0: DVector<f64>, scale: DMatrix<f64> },
    /// Linear drift with constant diffusion through the Girsanov sampler.
    Girsanov(Box<GirsanovSampler>),
    /// ε-strong transport of the Brownian skeleton.
    Transport { spec: Box<SdeSpec>, caps: Caps },
}

impl TerminalSource {
    pub fn for_model(spec: &SdeSpec, caps: Caps) -> Result<Self> {
        let d = spec.dim_state;
        if spec.has_zero_drift() && (spec.horizon - 1.0).abs() < 1e-12 {
            let scale = match &spec.kind {
                DiffusionKind::IdentityDiffusion => Some(DMatrix::identity(d, d)),
                DiffusionKind::ConstantDiffusion(s) => Some(s.clone()),
                DiffusionKind::General(_) => None,
            };
            if let Some(scale) = scale {
                return Ok(TerminalSource::Gaussian {
                    x0: DVector::from_column_slice(&spec.x0),
                    scale,
                });
            }
        }
        if let Ok(g) = GirsanovSampler::new(spec, caps) {
            return Ok(TerminalSource::Girsanov(Box::new(g)));
        }
        Ok(TerminalSource::Transport {
            spec: Box::new(spec.clone()),
            caps,
        })
    }

    /// Force the ε-strong transport route.
    pub fn transport(spec: &SdeSpec, caps: Caps) -> Self {
        TerminalSource::Transport {
            spec: Box::new(spec.clone()),
            caps,
        }
    }

    /// One fresh draw of `X(1)`, localized in `partition`.
    pub fn locate(&self, partition: &Partition, rng: &mut Stream) -> Result<LocalizationOutcome> {
        match self {
            TerminalSource::Gaussian { x0, scale } => {
                let z = DVector::from_fn(scale.ncols(), |_, _| rng.normal());
                let x = x0 + scale * z;
                localize(&mut ExactTerminal(x.iter().copied().collect()), partition)
            }
            TerminalSource::Girsanov(g) => {
                let rec = g.sample(rng.next_u64(), 0, 1e-8)?;
                localize(&mut ExactTerminal(rec.value), partition)
            }
            TerminalSource::Transport { spec, caps } => {
                let (_, mut h) = tes::open(spec, 0.5, rng.fork(), *caps)?;
                localize(&mut h, partition)
            }
        }
    }
}
