//! Tolerance-enforced simulation: certified piecewise-constant path
//! approximations that can be refined conditionally on earlier output.
//!
//! Two backends share one handle type. The Brownian backend covers zero-drift
//! systems, whose grid values are exact. The transport backend runs an Euler
//! recursion over the same skeleton and bounds the error with a Grönwall
//! argument: with `ō_k` a bound on the mean oscillation of the Euler
//! interpolant over segment `k`, `sup_t ‖X_t − Y_t‖ ≤ L e^L h Σ_k ō_k` where `L`
//! is the declared drift Lipschitz constant.

pub mod brownian;

use nalgebra::{DMatrix, DVector};

use crate::error::{Result, SdeError, StageTag};
use crate::model::{DiffusionKind, SdeSpec};
use crate::rng::Stream;
use brownian::{deviation_bound, BrownianSkeleton};

/// Refinement caps.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct Caps {
    /// Hard cap on dyadic levels.
    pub max_level: u32,
    /// Memory guard: grids finer than this are refused as budget exhaustion.
    pub max_grid_level: u32,
}

impl Default for Caps {
    fn default() -> Self {
        Caps {
            max_level: 40,
            max_grid_level: 22,
        }
    }
}

impl Caps {
    pub fn ceiling(&self) -> u32 {
        self.max_level.min(self.max_grid_level)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Backend {
    Brownian,
    Transport,
}

/// A diffusion with additive noise, `dX = μ(X) dt + S dW`, `S` constant.
#[derive(Debug, Clone)]
pub struct TesSystem {
    spec: SdeSpec,
    backend: Backend,
    /// `S`, or `None` for the identity.
    scale: Option<DMatrix<f64>>,
    scale_norm: f64,
}

impl TesSystem {
    pub fn new(spec: &SdeSpec) -> Result<Self> {
        let (scale, scale_norm) = match &spec.kind {
            DiffusionKind::IdentityDiffusion => (None, 1.0),
            DiffusionKind::ConstantDiffusion(m) => {
                if m.nrows() != spec.dim_state || m.ncols() != spec.dim_noise {
                    return Err(SdeError::Config("diffusion matrix has the wrong shape".into()));
                }
                let n = m.clone().svd(false, false).singular_values.max();
                (Some(m.clone()), n)
            }
            DiffusionKind::General(_) => {
                return Err(SdeError::Capability(
                    "state-dependent diffusion is not supported by the Brownian or transport backend".into(),
                ))
            }
        };
        let backend = if spec.has_zero_drift() {
            Backend::Brownian
        } else {
            Backend::Transport
        };
        Ok(TesSystem {
            spec: spec.clone(),
            backend,
            scale,
            scale_norm,
        })
    }

    pub fn backend(&self) -> Backend {
        self.backend
    }

    pub fn dim(&self) -> usize {
        self.spec.dim_state
    }

    pub fn spec(&self) -> &SdeSpec {
        &self.spec
    }

    fn noise(&self, dw: &[f64]) -> Vec<f64> {
        match &self.scale {
            None => dw.to_vec(),
            Some(s) => (s * DVector::from_column_slice(dw)).as_slice().to_vec(),
        }
    }
}

/// Piecewise-constant certified approximation on the dyadic grid `k 2^-ℓ`.
#[derive(Debug, Clone)]
pub struct CertifiedPath {
    pub level: u32,
    /// State at each grid time; cell `k` holds `values[k]` on `[t_k, t_{k+1})`.
    pub values: Vec<Vec<f64>>,
    pub tolerance: f64,
    /// Sup deviation bound per cell.
    pub certificate: Vec<f64>,
    /// Error bound of the value at `t = 1`.
    pub terminal_certificate: f64,
}

impl CertifiedPath {
    pub fn grid(&self) -> Vec<f64> {
        let n = 1usize << self.level;
        (0..=n).map(|k| k as f64 / n as f64).collect()
    }

    pub fn max_certificate(&self) -> f64 {
        self.certificate.iter().fold(0.0, |m, c| m.max(*c))
    }

    /// Value of the piecewise-constant path at time `t`.
    pub fn at(&self, t: f64) -> &[f64] {
        let n = 1usize << self.level;
        let k = ((t * n as f64).floor() as usize).min(n);
        &self.values[k]
    }

    /// Rows `(t, value..., segment_certificate)` for debug dumps.
    pub fn rows(&self) -> Vec<Vec<f64>> {
        let grid = self.grid();
        self.values
            .iter()
            .enumerate()
            .map(|(k, v)| {
                let mut row = vec![grid[k]];
                row.extend_from_slice(v);
                row.push(if k < self.certificate.len() { self.certificate[k] } else { self.terminal_certificate });
                row
            })
            .collect()
    }
}

/// Terminal value and its certificate, the pair consumed by localization.
#[derive(Debug, Clone, PartialEq)]
pub struct Terminal {
    pub value: Vec<f64>,
    pub certificate: f64,
    pub level: u32,
}

/// Anything whose terminal value can be certified to a requested tolerance.
pub trait TerminalRefiner {
    fn terminal_within(&mut self, eps: f64) -> Result<Terminal>;
}

/// Resumable state: one Brownian skeleton plus the system it drives.
#[derive(Debug, Clone)]
pub struct RefinementHandle {
    system: TesSystem,
    skeleton: BrownianSkeleton,
    caps: Caps,
    last_tolerance: Option<f64>,
}

struct Evaluated {
    values: Vec<Vec<f64>>,
    cell_cert: Vec<f64>,
    terminal_cert: f64,
}

impl RefinementHandle {
    pub fn new(system: TesSystem, rng: Stream, caps: Caps) -> Self {
        let skeleton = BrownianSkeleton::new(system.spec.dim_noise, rng);
        RefinementHandle {
            system,
            skeleton,
            caps,
            last_tolerance: None,
        }
    }

    pub fn skeleton(&self) -> &BrownianSkeleton {
        &self.skeleton
    }

    pub fn level(&self) -> u32 {
        self.skeleton.level()
    }

    /// Per-coordinate sup of `|W_t − W_{t_k}|` on cell `k`, as a Euclidean norm.
    fn noise_oscillation(&self, k: usize, r: f64) -> f64 {
        let mut s = 0.0;
        for i in 0..self.skeleton.dim() {
            let w = self.skeleton.coord(i);
            let o = (w[k + 1] - w[k]).abs() + r;
            s += o * o;
        }
        s.sqrt() * self.system.scale_norm
    }

    /// Bound on `h⁻¹ ∫_cell ‖W_s − W_{t_k}‖ ds`: tents average half their peak.
    fn noise_mean_oscillation(&self, k: usize, r: f64) -> f64 {
        let mut s = 0.0;
        for i in 0..self.skeleton.dim() {
            let w = self.skeleton.coord(i);
            s += 0.5 * ((w[k + 1] - w[k]).abs() + r);
        }
        s * self.system.scale_norm
    }

    fn evaluate(&self) -> Result<Evaluated> {
        let sk = &self.skeleton;
        let n = sk.segments();
        let h = sk.step();
        let r = sk
            .deviation_certificate()
            .map(|_| deviation_bound(sk.level()))
            .unwrap_or(f64::INFINITY);
        let d = self.system.dim();
        let x0 = &self.system.spec.x0;
        let mut values = Vec::with_capacity(n + 1);
        let mut osc = Vec::with_capacity(n);
        let mut mean_osc = 0.0;
        let mut y = x0.clone();
        let mut dw = vec![0.0; sk.dim()];
        for k in 0..n {
            values.push(y.clone());
            for (i, slot) in dw.iter_mut().enumerate() {
                let w = sk.coord(i);
                *slot = w[k + 1] - w[k];
            }
            let inc = self.system.noise(&dw);
            let wosc = self.noise_oscillation(k, r);
            match self.system.backend {
                Backend::Brownian => {
                    for j in 0..d {
                        y[j] += inc[j];
                    }
                    osc.push(wosc);
                }
                Backend::Transport => {
                    let mu = self.system.spec.drift(&y)?;
                    let mnorm = mu.iter().map(|v| v * v).sum::<f64>().sqrt();
                    for j in 0..d {
                        y[j] += mu[j] * h + inc[j];
                    }
                    osc.push(mnorm * h + wosc);
                    mean_osc += 0.5 * mnorm * h + self.noise_mean_oscillation(k, r);
                }
            }
        }
        values.push(y);
        let terminal_cert = match self.system.backend {
            Backend::Brownian => 0.0,
            Backend::Transport => {
                let lip = self.system.spec.bounds.drift_lipschitz;
                lip * lip.exp() * h * mean_osc
            }
        };
        let cell_cert = osc.iter().map(|o| o + terminal_cert).collect();
        Ok(Evaluated {
            values,
            cell_cert,
            terminal_cert,
        })
    }

    fn grow(&mut self, target: u32) -> Result<()> {
        if target > self.caps.ceiling() {
            return Err(SdeError::BudgetExhausted {
                stage: StageTag::Refinement,
                spent: self.skeleton.level() as u64,
                last_eps: self.last_tolerance.unwrap_or(f64::INFINITY),
            });
        }
        self.skeleton.refine_to(target);
        Ok(())
    }

    fn emit(&mut self, eps: f64) -> Result<CertifiedPath> {
        let mut level = self.skeleton.level().max(self.skeleton.certified_from());
        loop {
            self.grow(level)?;
            let ev = self.evaluate()?;
            let max = ev.cell_cert.iter().fold(0.0f64, |m, c| m.max(*c));
            if max <= eps {
                self.last_tolerance = Some(eps);
                return Ok(CertifiedPath {
                    level,
                    values: ev.values,
                    tolerance: eps,
                    certificate: ev.cell_cert,
                    terminal_certificate: ev.terminal_cert,
                });
            }
            level += 1;
        }
    }

    /// The path on the grid of `level`, which must not be coarser than the
    /// current skeleton. Does not count as an emitted tolerance.
    pub fn at_level(&mut self, level: u32) -> Result<CertifiedPath> {
        if level < self.skeleton.level() {
            return Err(SdeError::Contract(format!(
                "level {level} is coarser than the skeleton level {}",
                self.skeleton.level()
            )));
        }
        self.grow(level)?;
        let ev = self.evaluate()?;
        let tolerance = ev.cell_cert.iter().fold(0.0f64, |m, c| m.max(*c));
        Ok(CertifiedPath {
            level,
            values: ev.values,
            tolerance,
            certificate: ev.cell_cert,
            terminal_certificate: ev.terminal_cert,
        })
    }

    /// Conditional refinement to a strictly smaller tolerance.
    pub fn refine(&mut self, eps: f64) -> Result<CertifiedPath> {
        if let Some(prev) = self.last_tolerance {
            if !(eps < prev) {
                return Err(SdeError::Contract(format!(
                    "refine tolerance {eps} must be below the previous {prev}"
                )));
            }
        }
        if !(eps > 0.0) {
            return Err(SdeError::Contract("tolerance must be positive".into()));
        }
        self.emit(eps)
    }
}

impl TerminalRefiner for RefinementHandle {
    fn terminal_within(&mut self, eps: f64) -> Result<Terminal> {
        let mut level = self.skeleton.level();
        loop {
            if self.system.backend == Backend::Transport {
                level = level.max(self.skeleton.certified_from());
            }
            self.grow(level)?;
            let ev = self.evaluate()?;
            if ev.terminal_cert <= eps {
                return Ok(Terminal {
                    value: ev.values[ev.values.len() - 1].clone(),
                    certificate: ev.terminal_cert,
                    level,
                });
            }
            level += 1;
        }
    }
}

/// Open a handle and emit the first path at tolerance `eps`.
pub fn open(spec: &SdeSpec, eps: f64, rng: Stream, caps: Caps) -> Result<(CertifiedPath, RefinementHandle)> {
    if !(eps > 0.0) {
        return Err(SdeError::Contract("tolerance must be positive".into()));
    }
    let system = TesSystem::new(spec)?;
    let mut handle = RefinementHandle::new(system, rng, caps);
    let path = handle.refine(eps)?;
    Ok((path, handle))
}

/// `(Y_ε(1), certificate)`.
pub fn terminal_value(path: &CertifiedPath) -> (Vec<f64>, f64) {
    (path.values[path.values.len() - 1].clone(), path.terminal_certificate)
}
