//! Explicit density constants: the local Lipschitz constant `C_S` and the
//! lower bound `δ_S` of the transition density, evaluated line by line.

use serde::Serialize;

use crate::error::{Result, SdeError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConstantInputs {
    pub m: f64,
    pub lambda_down: f64,
    pub lambda_up: f64,
    pub d: usize,
    pub t: f64,
    /// Parametrix parameter in (0, 1).
    pub eps: f64,
}

impl ConstantInputs {
    pub fn check(&self) -> Result<()> {
        let ok = self.m >= 0.0
            && self.lambda_down > 0.0
            && self.lambda_down <= self.lambda_up
            && self.d >= 1
            && self.t > 0.0
            && self.eps > 0.0
            && self.eps < 1.0;
        if ok && [self.m, self.lambda_up, self.t].iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(SdeError::Config(format!("invalid constant inputs {self:?}")))
        }
    }
}

/// Sets whose distance to `x0` the constants need.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum SetDescriptor {
    Box { lo: Vec<f64>, hi: Vec<f64> },
    Ball { center: Vec<f64>, radius: f64 },
    /// User-supplied `inf` and `sup` distances to `x0`.
    Custom { inf_dist: f64, sup_dist: f64 },
}

impl SetDescriptor {
    /// Unit cube `[i, i+1)` enlarged by `r` on every side.
    pub fn enlarged_cube(cell: &[i64], r: f64) -> Self {
        SetDescriptor::Box {
            lo: cell.iter().map(|i| *i as f64 - r).collect(),
            hi: cell.iter().map(|i| *i as f64 + 1.0 + r).collect(),
        }
    }

    pub fn inf_dist(&self, x0: &[f64]) -> f64 {
        match self {
            SetDescriptor::Box { lo, hi } => x0
                .iter()
                .zip(lo.iter().zip(hi))
                .map(|(x, (a, b))| {
                    let g = (a - x).max(0.0).max(x - b);
                    g * g
                })
                .sum::<f64>()
                .sqrt(),
            SetDescriptor::Ball { center, radius } => (dist(x0, center) - radius).max(0.0),
            SetDescriptor::Custom { inf_dist, .. } => *inf_dist,
        }
    }

    pub fn sup_dist(&self, x0: &[f64]) -> f64 {
        match self {
            SetDescriptor::Box { lo, hi } => x0
                .iter()
                .zip(lo.iter().zip(hi))
                .map(|(x, (a, b))| {
                    let g = (x - a).abs().max((b - x).abs());
                    g * g
                })
                .sum::<f64>()
                .sqrt(),
            SetDescriptor::Ball { center, radius } => dist(x0, center) + radius,
            SetDescriptor::Custom { sup_dist, .. } => *sup_dist,
        }
    }
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LipschitzLedger {
    pub inputs: ConstantInputs,
    pub inf_dist: f64,
    #[serde(rename = "C0")]
    pub c0: f64,
    #[serde(rename = "C1")]
    pub c1: f64,
    #[serde(rename = "C2")]
    pub c2: f64,
    #[serde(rename = "C3")]
    pub c3: f64,
    #[serde(rename = "C4")]
    pub c4: f64,
    #[serde(rename = "C5")]
    pub c5: f64,
    #[serde(rename = "C6")]
    pub c6: f64,
    #[serde(rename = "C7")]
    pub c7: f64,
    #[serde(rename = "C8")]
    pub c8: f64,
    #[serde(rename = "CS")]
    pub c_s: f64,
    /// The decay factor uses the unsquared distance, as printed.
    pub note: &'static str,
}

/// Algorithm 7.
pub fn compute_lipschitz(inp: &ConstantInputs, inf_dist: f64) -> Result<LipschitzLedger> {
    inp.check()?;
    let (m, ld, lu, t, e) = (inp.m, inp.lambda_down, inp.lambda_up, inp.t, inp.eps);
    let d = inp.d as f64;
    let c0 = (2.0 * std::f64::consts::PI.sqrt()).powf(-d) * lu.powf(d / 2.0);
    let c1 = (2.0 * e * std::f64::consts::E).powf(-0.5) * ld.sqrt() / lu * c0;
    let ratio = 4.0 * ld / (std::f64::consts::E * e * lu);
    let c2 = c0 * ratio * ratio;
    let c3 = c0 * ratio * ratio + c0 * m / 4.0 * (2.0 * ld / (e * std::f64::consts::E)).sqrt();
    let c4 = d * m * c3 + d * (d - 1.0) * m * c2 + d * (d + 1.0) * m * c1 + t.sqrt() * (0.5 * d * d + d) * m * c0;
    let kern = 4.0 * std::f64::consts::PI * ld / (1.0 - e);
    let c5 = kern.powf(-d / 2.0);
    let c6 = c4 * kern.powf(d / 2.0);
    let c7 = c5 * c6 * (c6 * t).exp();
    if !c7.is_finite() {
        return Err(SdeError::Overflow("C7 = C5·C6·exp(C6·T)"));
    }
    let c8 = 2.0 * c1 * c7 * kern.powf(d / 2.0);
    if !c8.is_finite() {
        return Err(SdeError::Overflow("C8"));
    }
    let c_s = (d * c1 / t.powf((d + 1.0) / 2.0) + d * c8 / t.powf((d - 1.0) / 2.0))
        * (-(1.0 - e) * inf_dist / (4.0 * ld * t)).exp();
    Ok(LipschitzLedger {
        inputs: *inp,
        inf_dist,
        c0,
        c1,
        c2,
        c3,
        c4,
        c5,
        c6,
        c7,
        c8,
        c_s,
        note: "CS decay uses the unsquared distance inf|x-x0| exactly as printed in Algorithm 7",
    })
}

/// `((p(p−1)/2)(p/(p−1))^p)^{p/2}`.
pub fn c_bdg(p: f64) -> f64 {
    (p * (p - 1.0) / 2.0 * (p / (p - 1.0)).powf(p)).powf(p / 2.0)
}

/// Ψ₁–Ψ₄ evaluated literally.
pub fn psi(k: u8, x: f64, inp: &ConstantInputs) -> f64 {
    let (m, ld, lu, t) = (inp.m, inp.lambda_down, inp.lambda_up, inp.t);
    let d = inp.d as f64;
    let b3 = c_bdg(3.0);
    let b4 = c_bdg(4.0);
    match k {
        1 => d * d / (ld * ld) * m * (m + x) + d / ld * m,
        2 => {
            (m + x).powi(2) * d * d * (0.5 / (ld * ld) * m * d + m * m * d * d / ld.powi(3))
                + 2.0 / ld * m * m * d * d
                + m * d * x / ld
                + 2.0 / (ld * ld) * m.powi(3) * d.powi(3)
                + 2.0 / (ld * ld) * m * m * d * d * x
        }
        3 => {
            d.powi(4) * t * lu / (ld * ld) * m * x
                + d.powi(4) * t * lu / (ld * ld) * m * m
                + d.powi(3) * t * lu / ld * m
                + b3 / 3.0 * d.powf(3.5) * t.sqrt() * lu.powf(1.5) / (ld * ld) * m
        }
        4 => {
            let t2 = t * t;
            let quad = 0.25 * d.powi(5) * t2 * lu / (ld * ld) * m + 0.5 * d.powi(6) * t2 * lu / ld.powi(3) * m * m;
            let lin = b3 / 9.0 * (d * lu * t).powf(1.5) * (m * d.powi(3) / (ld * ld) + 2.0 * m.powi(3) * d.powi(4) / ld.powi(3))
                + d.powi(5) * t2 * lu / (ld * ld) * m * m
                + d.powi(6) * t2 * lu / ld.powi(3) * m.powi(3)
                + d.powi(3) * t2 * lu / ld * m;
            let cst = b4 / 24.0 * d.powi(5) * t * lu / (ld * ld) * m
                + b4 / 12.0 * d.powi(6) * t * lu / ld.powi(3) * m * m
                + 2.0 / 9.0 * b3 * d.powf(4.5) * t.powf(1.5) * lu.powf(1.5) / (ld * ld) * m * m
                + 2.0 / 9.0 * b3 * d.powf(5.5) * t.powf(1.5) * lu.powf(1.5) / ld.powi(3) * m.powi(3)
                + b3 / 9.0 * d.powf(2.5) * t.powf(1.5) * lu.powf(1.5) / ld * m
                + 0.5 * d.powi(6) * t2 * lu / ld.powi(3) * m.powi(4)
                + 0.5 * d.powi(4) * t2 * lu / ld * m * m
                + 0.75 * d.powi(5) * t2 * lu / (ld * ld) * m.powi(3);
            quad * x * x + lin * x + cst
        }
        _ => panic!("psi index must be 1..=4"),
    }
}

/// `J↑(x; T)` with `x` standing in for `‖y0 − x0‖` in every summand.
pub fn j_upper(x: f64, inp: &ConstantInputs) -> f64 {
    let (m, ld, lu, t) = (inp.m, inp.lambda_down, inp.lambda_up, inp.t);
    let d = inp.d as f64;
    t / ld * (m + x / t).powi(2)
        + d / 2.0 * (2.0 * std::f64::consts::PI * t).ln()
        + m * (d * lu * t).sqrt() * d / ld
        + d / 2.0 / ld * m * x
        + 0.5 * d * lu * t * psi(1, x / t, inp)
        + 0.25 * d * lu * t * t * psi(2, x / t, inp)
        + c_bdg(3.0) / 3.0 * m * d.powf(4.5) / (ld * ld) * lu.powf(1.5) * t.sqrt()
        + psi(3, x / t, inp)
        + psi(4, x / t, inp)
        + d / 2.0 * lu.ln()
        + 0.5 * d * d * lu / ld
        + d / 2.0 * x * x / t
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum DeltaStatus {
    Representable,
    /// `exp(−J↑)` is positive but below the smallest positive double.
    BelowRepresentable,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LowerBoundLedger {
    pub inputs: ConstantInputs,
    #[serde(rename = "DS")]
    pub d_s: f64,
    #[serde(rename = "CBDG3")]
    pub c_bdg3: f64,
    #[serde(rename = "CBDG4")]
    pub c_bdg4: f64,
    /// Ψ₁..Ψ₄ at `D_S / T`, the argument `J↑` uses.
    #[serde(rename = "Psi1")]
    pub psi1: f64,
    #[serde(rename = "Psi2")]
    pub psi2: f64,
    #[serde(rename = "Psi3")]
    pub psi3: f64,
    #[serde(rename = "Psi4")]
    pub psi4: f64,
    #[serde(rename = "Jup")]
    pub j_up: f64,
    /// `log δ_S = −J↑`, exact even when `δ_S` underflows.
    pub log_delta_s: f64,
    #[serde(rename = "deltaS")]
    pub delta_s: f64,
    pub status: DeltaStatus,
    pub note: &'static str,
}

/// Algorithm 8 given `D_S`.
pub fn compute_lower_bound_at(d_s: f64, inp: &ConstantInputs) -> Result<LowerBoundLedger> {
    inp.check()?;
    if !(d_s >= 0.0 && d_s.is_finite()) {
        return Err(SdeError::Config(format!("D_S must be finite and nonnegative, got {d_s}")));
    }
    let y = d_s / inp.t;
    let j_up = j_upper(d_s, inp);
    let delta_s = (-j_up).exp();
    Ok(LowerBoundLedger {
        inputs: *inp,
        d_s,
        c_bdg3: c_bdg(3.0),
        c_bdg4: c_bdg(4.0),
        psi1: psi(1, y, inp),
        psi2: psi(2, y, inp),
        psi3: psi(3, y, inp),
        psi4: psi(4, y, inp),
        j_up,
        log_delta_s: -j_up,
        delta_s,
        status: if delta_s > 0.0 {
            DeltaStatus::Representable
        } else {
            DeltaStatus::BelowRepresentable
        },
        note: "J-up substitutes its argument x for |y0 - x0| in every summand",
    })
}

pub fn compute_lower_bound(set: &SetDescriptor, x0: &[f64], inp: &ConstantInputs) -> Result<LowerBoundLedger> {
    compute_lower_bound_at(set.sup_dist(x0), inp)
}
