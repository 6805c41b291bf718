//! SDE problem instances and the named model registry.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Result, SdeError};

pub type DriftFn = Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;
pub type DiffusionFn = Arc<dyn Fn(&[f64]) -> DMatrix<f64> + Send + Sync>;

/// Drift μ. Linear drifts `B x + c` unlock the likelihood engine.
#[derive(Clone)]
pub enum Drift {
    Linear { b: DMatrix<f64>, c: DVector<f64> },
    Custom(DriftFn),
}

impl fmt::Debug for Drift {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Drift::Linear { b, c } => write!(f, "Linear {{ b: {:?}, c: {:?} }}", b.as_slice(), c.as_slice()),
            Drift::Custom(_) => write!(f, "Custom"),
        }
    }
}

#[derive(Clone)]
pub enum DiffusionKind {
    IdentityDiffusion,
    ConstantDiffusion(DMatrix<f64>),
    General(DiffusionFn),
}

impl fmt::Debug for DiffusionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DiffusionKind::IdentityDiffusion => write!(f, "IdentityDiffusion"),
            DiffusionKind::ConstantDiffusion(m) => write!(f, "ConstantDiffusion({:?})", m.as_slice()),
            DiffusionKind::General(_) => write!(f, "General"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct RegularityBounds {
    pub m_bound: f64,
    pub lambda_down: f64,
    pub lambda_up: f64,
    pub drift_lipschitz: f64,
}

impl RegularityBounds {
    /// Zero `m_bound`/`drift_lipschitz` and `lambda_down == lambda_up` are
    /// admitted so that plain Brownian motion is expressible.
    pub fn check(&self) -> Result<()> {
        let ok = self.m_bound >= 0.0
            && self.drift_lipschitz >= 0.0
            && self.lambda_down > 0.0
            && self.lambda_down <= self.lambda_up
            && self.lambda_up.is_finite()
            && self.m_bound.is_finite();
        if ok {
            Ok(())
        } else {
            Err(SdeError::Config(format!("invalid regularity bounds {self:?}")))
        }
    }
}

#[derive(Debug, Clone)]
pub struct SdeSpec {
    pub name: String,
    pub dim_state: usize,
    pub dim_noise: usize,
    pub drift: Drift,
    pub kind: DiffusionKind,
    pub x0: Vec<f64>,
    pub horizon: f64,
    pub bounds: RegularityBounds,
    /// Box `(lo, hi)` on which `bounds` are claimed.
    pub validation_box: (Vec<f64>, Vec<f64>),
}

fn finite(v: &[f64], what: &str) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(SdeError::ModelEvaluation(what.to_string()))
    }
}

impl SdeSpec {
    pub fn drift(&self, x: &[f64]) -> Result<Vec<f64>> {
        let out = match &self.drift {
            Drift::Linear { b, c } => {
                let v = b * DVector::from_column_slice(x) + c;
                v.as_slice().to_vec()
            }
            Drift::Custom(f) => f(x),
        };
        finite(&out, "drift")?;
        Ok(out)
    }

    pub fn diffusion(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        let out = match &self.kind {
            DiffusionKind::IdentityDiffusion => DMatrix::identity(self.dim_state, self.dim_state),
            DiffusionKind::ConstantDiffusion(m) => m.clone(),
            DiffusionKind::General(f) => f(x),
        };
        finite(out.as_slice(), "diffusion")?;
        Ok(out)
    }

    /// `(B, c)` when the drift is linear.
    pub fn linear_drift(&self) -> Option<(&DMatrix<f64>, &DVector<f64>)> {
        match &self.drift {
            Drift::Linear { b, c } => Some((b, c)),
            Drift::Custom(_) => None,
        }
    }

    pub fn has_zero_drift(&self) -> bool {
        matches!(&self.drift, Drift::Linear { b, c } if b.iter().all(|v| *v == 0.0) && c.iter().all(|v| *v == 0.0))
    }

    pub fn with_x0(mut self, x0: Vec<f64>) -> Result<Self> {
        if x0.len() != self.dim_state {
            return Err(SdeError::Config(format!(
                "x0 has {} entries, model dimension is {}",
                x0.len(),
                self.dim_state
            )));
        }
        self.x0 = x0;
        Ok(self)
    }

    pub fn with_bounds(mut self, bounds: RegularityBounds) -> Result<Self> {
        bounds.check()?;
        self.bounds = bounds;
        Ok(self)
    }
}

/// `a(x) = σ(x) σ(x)ᵀ`, symmetrized so that it equals its transpose bitwise.
pub fn evaluate_a(spec: &SdeSpec, x: &[f64]) -> Result<DMatrix<f64>> {
    finite(x, "evaluate_a input")?;
    let s = spec.diffusion(x)?;
    let a = &s * s.transpose();
    let sym = (&a + a.transpose()) * 0.5;
    finite(sym.as_slice(), "a(x)")?;
    Ok(sym)
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct ProbeResult {
    pub point: Vec<f64>,
    pub pass: bool,
    pub violations: Vec<String>,
}

fn probe_directions(d: usize) -> Vec<DVector<f64>> {
    let mut dirs = Vec::new();
    for i in 0..d {
        let mut e = DVector::zeros(d);
        e[i] = 1.0;
        dirs.push(e);
    }
    if d > 1 {
        dirs.push(DVector::from_element(d, 1.0 / (d as f64).sqrt()));
        let mut alt = DVector::from_element(d, 1.0 / (d as f64).sqrt());
        for i in (1..d).step_by(2) {
            alt[i] = -alt[i];
        }
        dirs.push(alt);
    }
    dirs
}

/// Spot-check `‖μ‖∞ ≤ M` and `λ↓²‖ξ‖² ≤ ξᵀaξ ≤ λ↑²‖ξ‖²` at each probe.
pub fn validate_bounds(spec: &SdeSpec, probes: &[Vec<f64>]) -> Vec<ProbeResult> {
    let rb = spec.bounds;
    let tol = 1e-12;
    probes
        .iter()
        .map(|x| {
            let mut violations = Vec::new();
            match spec.drift(x) {
                Ok(mu) => {
                    let sup = mu.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                    if sup > rb.m_bound * (1.0 + tol) + tol {
                        violations.push(format!("drift sup-norm {sup} exceeds M = {}", rb.m_bound));
                    }
                }
                Err(e) => violations.push(e.to_string()),
            }
            match evaluate_a(spec, x) {
                Ok(a) => {
                    for xi in probe_directions(spec.dim_state) {
                        let q = (xi.transpose() * &a * &xi)[(0, 0)];
                        let n2 = xi.norm_squared();
                        if q < rb.lambda_down.powi(2) * n2 * (1.0 - tol) {
                            violations.push(format!("ellipticity lower bound fails: {q} < λ↓²"));
                        }
                        if q > rb.lambda_up.powi(2) * n2 * (1.0 + tol) {
                            violations.push(format!("ellipticity upper bound fails: {q} > λ↑²"));
                        }
                    }
                }
                Err(e) => violations.push(e.to_string()),
            }
            ProbeResult {
                point: x.clone(),
                pass: violations.is_empty(),
                violations,
            }
        })
        .collect()
}

/// Regular grid of `per_axis^d` points spanning the validation box.
pub fn probe_grid(spec: &SdeSpec, per_axis: usize) -> Vec<Vec<f64>> {
    let (lo, hi) = &spec.validation_box;
    let d = spec.dim_state;
    let total = per_axis.pow(d as u32);
    (0..total)
        .map(|mut k| {
            (0..d)
                .map(|j| {
                    let idx = k % per_axis;
                    k /= per_axis;
                    let t = if per_axis == 1 { 0.5 } else { idx as f64 / (per_axis - 1) as f64 };
                    lo[j] + t * (hi[j] - lo[j])
                })
                .collect()
        })
        .collect()
}

/// Parameter map for registry constructors.
pub type Params = BTreeMap<String, f64>;

fn param(p: &Params, key: &str, default: f64) -> Result<f64> {
    let v = p.get(key).copied().unwrap_or(default);
    if v.is_finite() {
        Ok(v)
    } else {
        Err(SdeError::Config(format!("parameter {key} is not finite")))
    }
}

fn dim_param(p: &Params, default: usize) -> Result<usize> {
    let d = param(p, "d", default as f64)?;
    if d < 1.0 || d.fract() != 0.0 || d > 16.0 {
        return Err(SdeError::Config(format!("dimension d = {d} must be an integer in 1..=16")));
    }
    Ok(d as usize)
}

/// Half-width of every registry validation box around `x0`.
pub const VALIDATION_HALF_WIDTH: f64 = 5.0;

fn linear_model(name: &str, b: DMatrix<f64>, c: DVector<f64>, x0: Vec<f64>) -> SdeSpec {
    let d = c.len();
    let lo: Vec<f64> = x0.iter().map(|v| v - VALIDATION_HALF_WIDTH).collect();
    let hi: Vec<f64> = x0.iter().map(|v| v + VALIDATION_HALF_WIDTH).collect();
    // sup over the box of |(Bx + c)_i| is attained at a corner, row by row.
    let mut m_bound = 0.0f64;
    for i in 0..d {
        let mut s = c[i];
        let mut spread = 0.0;
        for j in 0..d {
            let mid = 0.5 * (lo[j] + hi[j]);
            s += b[(i, j)] * mid;
            spread += b[(i, j)].abs() * 0.5 * (hi[j] - lo[j]);
        }
        m_bound = m_bound.max(s.abs() + spread);
    }
    let lip = b.clone().svd(false, false).singular_values.iter().fold(0.0f64, |m, v| m.max(*v));
    SdeSpec {
        name: name.to_string(),
        dim_state: d,
        dim_noise: d,
        drift: Drift::Linear { b, c },
        kind: DiffusionKind::IdentityDiffusion,
        x0,
        horizon: 1.0,
        bounds: RegularityBounds {
            m_bound,
            lambda_down: 1.0,
            lambda_up: 1.0,
            drift_lipschitz: lip,
        },
        validation_box: (lo, hi),
    }
}

/// Names accepted by [`build_model`].
pub const MODEL_NAMES: [&str; 4] = ["bm", "bm-drift-c", "ou", "rotational"];

/// Build a registry model.
///
/// Keys: `bm` takes `d`; `bm-drift-c` takes `d` and `c` (same drift on every
/// axis) or `c1..cd`; `ou` takes `theta` and `d`; `rotational` takes `omega`
/// giving `A = [[0, ω], [−ω, 0]]`. Any model takes `x1..xd` for the start.
pub fn build_model(name: &str, params: &Params) -> Result<SdeSpec> {
    let spec = match name {
        "bm" => {
            let d = dim_param(params, 1)?;
            linear_model(name, DMatrix::zeros(d, d), DVector::zeros(d), vec![0.0; d])
        }
        "bm-drift-c" => {
            let d = dim_param(params, 1)?;
            let base = param(params, "c", 0.1)?;
            let mut c = DVector::from_element(d, base);
            for i in 0..d {
                c[i] = param(params, &format!("c{}", i + 1), base)?;
            }
            linear_model(name, DMatrix::zeros(d, d), c, vec![0.0; d])
        }
        "ou" => {
            let d = dim_param(params, 1)?;
            let theta = param(params, "theta", 1.0)?;
            if theta <= 0.0 {
                return Err(SdeError::Config("ou requires theta > 0".into()));
            }
            linear_model(name, DMatrix::identity(d, d) * -theta, DVector::zeros(d), vec![1.0; d])
        }
        "rotational" => {
            let w = param(params, "omega", 1.0)?;
            if w == 0.0 {
                return Err(SdeError::Config("rotational requires omega != 0".into()));
            }
            let a = DMatrix::from_row_slice(2, 2, &[0.0, w, -w, 0.0]);
            linear_model(name, a, DVector::zeros(2), vec![1.0, 0.0])
        }
        other => {
            return Err(SdeError::Config(format!(
                "unknown model '{other}' (known: {})",
                MODEL_NAMES.join(", ")
            )))
        }
    };
    let d = spec.dim_state;
    let mut x0 = spec.x0.clone();
    let mut moved = false;
    for (i, v) in x0.iter_mut().enumerate() {
        if let Some(x) = params.get(&format!("x{}", i + 1)) {
            *v = *x;
            moved = true;
        }
    }
    if !moved {
        return Ok(spec);
    }
    let Drift::Linear { b, c } = spec.drift else { unreachable!() };
    let mut out = linear_model(name, b, c, x0);
    out.dim_noise = d;
    Ok(out)
}
