//! Certified evaluation of the Girsanov log-likelihood `log L(1)` along a
//! Brownian skeleton.
//!
//! For a linear drift every stage of the constant-diffusion sampler reduces
//! to a functional of one standard Brownian motion `V` on [0, 1]:
//!
//! ```text
//! log L = k0 + k1·V(1) + V(1)ᵀ K2 V(1) + Σ_{i<j} G_ij 𝒜_ij(V) + q ∫ w(s) ‖P V_s + r‖² ds
//! X(1)  = t0 + T1 V(1)
//! ```
//!
//! with `𝒜_ij` the Lévy areas. Terminal terms are exact. The area residual
//! beyond the polygon is bounded with a Chernoff bound from Lévy's area
//! transform. The integral splits on each cell into the chord part (exact up
//! to the weight's range), a part linear in the bridge (Gaussian given the
//! grid) and a nonnegative bridge-squared part (Chernoff bound from the
//! Cameron–Martin transform). All random bounds together fail with
//! probability below [`FAILURE_BUDGET`] per emitted certificate.

use nalgebra::{DMatrix, DVector};
use statrs::function::erf::erfc_inv;

use crate::error::{Result, SdeError, StageTag};
use crate::model::{DiffusionKind, SdeSpec};
use crate::rng::Stream;
use crate::tes::brownian::BrownianSkeleton;
use crate::tes::{Caps, Terminal, TerminalRefiner};

/// Probability that any probabilistic bound in one certificate fails.
pub const FAILURE_BUDGET: f64 = 1e-12;
/// Reject whitening when the diffusion matrix is this ill-conditioned.
pub const MAX_CONDITION: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Weight {
    Unit,
    /// `w(s) = τ / (1 + 2θτ s)²`, decreasing on [0, 1].
    TimeChange { theta: f64, tau: f64 },
}

impl Weight {
    fn at(&self, s: f64) -> f64 {
        match *self {
            Weight::Unit => 1.0,
            Weight::TimeChange { theta, tau } => tau / (1.0 + 2.0 * theta * tau * s).powi(2),
        }
    }
}

/// Reference measure a functional is written under.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Measure {
    /// Target law `P`: stage one.
    Target,
    /// Brownian reference `P̃`: stage two.
    Reference,
}

#[derive(Debug, Clone)]
pub struct LikelihoodFunctional {
    pub dim: usize,
    pub k0: f64,
    pub k1: DVector<f64>,
    pub k2: DMatrix<f64>,
    /// Strict upper triangle holds the area coefficients.
    pub g: DMatrix<f64>,
    pub q: f64,
    pub p: DMatrix<f64>,
    pub r: DVector<f64>,
    pub weight: Weight,
    pub t0: DVector<f64>,
    pub t1: DMatrix<f64>,
}

/// Affine map between the model state `X` and the whitened state `Z = W X`.
#[derive(Debug, Clone)]
pub struct Whitening {
    pub forward: DMatrix<f64>,
    pub inverse: DMatrix<f64>,
}

/// Whitened linear system `dZ = (B Z + c) dt + dW`, `Z(0) = z0`.
#[derive(Debug, Clone)]
pub struct WhitenedLinear {
    pub b: DMatrix<f64>,
    pub c: DVector<f64>,
    pub z0: DVector<f64>,
    pub whitening: Option<Whitening>,
}

/// Reduce a constant-diffusion linear model to identity diffusion with
/// `a^{-1/2}` from a symmetric eigendecomposition.
pub fn whiten(spec: &SdeSpec) -> Result<WhitenedLinear> {
    let (b, c) = spec
        .linear_drift()
        .ok_or_else(|| SdeError::Capability("the likelihood engine needs a linear drift B x + c".into()))?;
    if spec.has_zero_drift() {
        return Err(SdeError::Config(
            "zero drift is denylisted: L(1) ≡ 1 sits on a band boundary".into(),
        ));
    }
    let x0 = DVector::from_column_slice(&spec.x0);
    match &spec.kind {
        DiffusionKind::IdentityDiffusion => Ok(WhitenedLinear {
            b: b.clone(),
            c: c.clone(),
            z0: x0,
            whitening: None,
        }),
        DiffusionKind::ConstantDiffusion(s) => {
            if s.nrows() != s.ncols() {
                return Err(SdeError::Capability("whitening needs a square diffusion matrix".into()));
            }
            let a = s * s.transpose();
            let a = (&a + a.transpose()) * 0.5;
            let eig = a.symmetric_eigen();
            let (lo, hi) = eig
                .eigenvalues
                .iter()
                .fold((f64::INFINITY, 0.0f64), |(l, h), v| (l.min(*v), h.max(*v)));
            if !(lo > 0.0) || hi / lo > MAX_CONDITION {
                return Err(SdeError::Config(format!(
                    "diffusion matrix is too ill-conditioned to whiten (eigenvalues {lo:e}..{hi:e})"
                )));
            }
            let q = &eig.eigenvectors;
            let inv_sqrt = DMatrix::from_diagonal(&eig.eigenvalues.map(|v| 1.0 / v.sqrt()));
            let sqrt = DMatrix::from_diagonal(&eig.eigenvalues.map(|v| v.sqrt()));
            let forward = q * inv_sqrt * q.transpose();
            let inverse = q * sqrt * q.transpose();
            Ok(WhitenedLinear {
                b: &forward * b * &inverse,
                c: &forward * c,
                z0: &forward * x0,
                whitening: Some(Whitening { forward, inverse }),
            })
        }
        DiffusionKind::General(_) => Err(SdeError::Capability(
            "the constant-diffusion sampler does not accept state-dependent diffusion".into(),
        )),
    }
}

fn is_zero(m: &DMatrix<f64>) -> bool {
    m.iter().all(|v| *v == 0.0)
}

impl LikelihoodFunctional {
    /// Stage-two functional under `P̃`, valid for any linear drift.
    pub fn reference(sys: &WhitenedLinear) -> Self {
        let d = sys.z0.len();
        let b = &sys.b;
        let s = (b + b.transpose()) * 0.5;
        let a = (b - b.transpose()) * 0.5;
        let mut g = DMatrix::zeros(d, d);
        for i in 0..d {
            for j in i + 1..d {
                g[(i, j)] = -2.0 * a[(i, j)];
            }
        }
        LikelihoodFunctional {
            dim: d,
            k0: -0.5 * s.trace(),
            k1: &sys.c + b * &sys.z0,
            k2: s * 0.5,
            g,
            q: -0.5,
            p: b.clone(),
            r: b * &sys.z0 + &sys.c,
            weight: Weight::Unit,
            t0: sys.z0.clone(),
            t1: DMatrix::identity(d, d),
        }
    }

    /// Stage-one functional under `P`, written through an exact Brownian
    /// representation of the linear SDE. Supported drifts: constant
    /// (`B = 0`), isotropic mean reversion (`B = −θI`) and antisymmetric
    /// rotation (`Bᵀ = −B`).
    pub fn target(sys: &WhitenedLinear) -> Result<Self> {
        let d = sys.z0.len();
        let b = &sys.b;
        let zero_d = DMatrix::zeros(d, d);
        if is_zero(b) {
            let c = &sys.c;
            return Ok(LikelihoodFunctional {
                dim: d,
                k0: 0.5 * c.norm_squared(),
                k1: c.clone(),
                k2: zero_d.clone(),
                g: zero_d.clone(),
                q: 0.0,
                p: zero_d,
                r: DVector::zeros(d),
                weight: Weight::Unit,
                t0: &sys.z0 + c,
                t1: DMatrix::identity(d, d),
            });
        }
        let theta = -b[(0, 0)];
        let isotropic = theta > 0.0 && is_zero(&(b + DMatrix::identity(d, d) * theta));
        if isotropic {
            let xs = &sys.c / theta;
            let z = &sys.z0 - &xs;
            let tau = (2.0 * theta).exp_m1() / (2.0 * theta);
            let e2 = (-2.0 * theta).exp();
            return Ok(LikelihoodFunctional {
                dim: d,
                k0: -0.5 * theta * (e2 - 1.0) * z.norm_squared() + 0.5 * theta * d as f64,
                k1: &z * (-theta * e2 * tau.sqrt()),
                k2: DMatrix::identity(d, d) * (-0.5 * theta * e2 * tau),
                g: zero_d,
                q: -0.5 * theta * theta,
                p: DMatrix::identity(d, d) * tau.sqrt(),
                r: z.clone(),
                weight: Weight::TimeChange { theta, tau },
                t0: &xs + &z * (-theta).exp(),
                t1: DMatrix::identity(d, d) * ((-theta).exp() * tau.sqrt()),
            });
        }
        let antisym = is_zero(&(b + b.transpose()));
        if antisym {
            let xs = if sys.c.iter().all(|v| *v == 0.0) {
                DVector::zeros(d)
            } else {
                let lu = b.clone().lu();
                let sol = lu.solve(&sys.c).ok_or_else(|| {
                    SdeError::Capability("rotation with a constant drift needs an invertible rotation generator".into())
                })?;
                -sol
            };
            let z = &sys.z0 - &xs;
            let mut g = DMatrix::zeros(d, d);
            for i in 0..d {
                for j in i + 1..d {
                    g[(i, j)] = -2.0 * b[(i, j)];
                }
            }
            let rot = b.clone().exp();
            return Ok(LikelihoodFunctional {
                dim: d,
                k0: 0.0,
                k1: b * &z,
                k2: zero_d,
                g,
                q: 0.5,
                p: b.clone(),
                r: b * &z,
                weight: Weight::Unit,
                t0: &xs + &rot * &z,
                t1: rot,
            });
        }
        Err(SdeError::Capability(
            "stage-one representation needs B = 0, B = −θI or an antisymmetric B".into(),
        ))
    }

    pub fn terminal_state(&self, v1: &[f64]) -> DVector<f64> {
        &self.t0 + &self.t1 * DVector::from_column_slice(v1)
    }
}

fn golden_min(f: impl Fn(f64) -> f64, lo: f64, hi: f64) -> f64 {
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let (mut a, mut b) = (lo, hi);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..120 {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    fc.min(fd)
}

/// Two-sided bound on the Lévy-area residual beyond the polygon, from the
/// conditional transform `E e^{sA} = (x/2)/sin(x/2) · exp(|w|²/2 (1 − (x/2)cot(x/2)))`.
pub fn area_residual_bound(h: f64, sum_sq_increments: f64, eta: f64) -> f64 {
    let ln2eta = (2.0 / eta).ln();
    let f = |x: f64| {
        let half = 0.5 * x;
        let g1 = (half / half.sin()).ln();
        let g2 = 1.0 - half / half.tan();
        (g1 + 0.5 * sum_sq_increments * g2 + h * ln2eta) / x
    };
    golden_min(f, 1e-9, 2.0 * std::f64::consts::PI - 1e-9)
}

/// Upper bound on `Σ ∫ b²` over `count` independent bridges of length `h`,
/// from `E e^{λ∫b̃²} = (y / sin y)^{1/2}`, `y = √(2λ)`.
pub fn bridge_square_bound(h: f64, count: f64, eta: f64) -> f64 {
    let ln1eta = (1.0 / eta).ln();
    let f = |y: f64| 2.0 * h * h * (0.5 * count * (y / y.sin()).ln() + ln1eta) / (y * y);
    golden_min(f, 1e-6, std::f64::consts::PI - 1e-9)
}

/// Certified interval for `log L(1)` at the skeleton's current level.
pub fn log_likelihood_bounds(f: &LikelihoodFunctional, sk: &BrownianSkeleton) -> (f64, f64) {
    let d = f.dim;
    let n = sk.segments();
    let h = sk.step();
    let v1 = DVector::from_vec(sk.terminal());
    let exact = f.k0 + f.k1.dot(&v1) + (v1.transpose() * &f.k2 * &v1)[(0, 0)];
    let pairs: Vec<(usize, usize)> = (0..d)
        .flat_map(|i| (i + 1..d).map(move |j| (i, j)))
        .filter(|(i, j)| f.g[(*i, *j)] != 0.0)
        .collect();
    let has_quad = f.q != 0.0;
    let parts = pairs.len() as f64 + if has_quad { 2.0 } else { 0.0 };
    let eta = FAILURE_BUDGET * sk.conditioning_mass() / parts.max(1.0);

    let mut centre = exact;
    let mut lo_extra = 0.0;
    let mut hi_extra = 0.0;
    for (i, j) in pairs {
        let (wi, wj) = (sk.coord(i), sk.coord(j));
        let mut poly = 0.0;
        let mut q = 0.0;
        for k in 0..n {
            let (di, dj) = (wi[k + 1] - wi[k], wj[k + 1] - wj[k]);
            poly += 0.5 * (wi[k] * dj - wj[k] * di);
            q += di * di + dj * dj;
        }
        let gij = f.g[(i, j)];
        let rad = gij.abs() * area_residual_bound(h, q, eta);
        centre += gij * poly;
        lo_extra += rad;
        hi_extra += rad;
    }
    if has_quad {
        let mut chord_lo = 0.0;
        let mut chord_hi = 0.0;
        let mut var = 0.0;
        let p = &f.p;
        let rows = p.nrows();
        let (mut pk, mut dp) = (vec![0.0; rows], vec![0.0; rows]);
        for k in 0..n {
            for (a, (pa, da)) in pk.iter_mut().zip(dp.iter_mut()).enumerate() {
                *pa = f.r[a];
                *da = 0.0;
                for i in 0..d {
                    let w = sk.coord(i);
                    *pa += p[(a, i)] * w[k];
                    *da += p[(a, i)] * (w[k + 1] - w[k]);
                }
            }
            let dot = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(a, b)| a * b).sum::<f64>();
            let chord = h * (dot(&pk, &pk) + dot(&pk, &dp) + dot(&dp, &dp) / 3.0);
            let (wa, wb) = (f.weight.at(k as f64 * h), f.weight.at((k + 1) as f64 * h));
            let (wmin, wmax) = (wa.min(wb), wa.max(wb));
            chord_lo += wmin * chord;
            chord_hi += wmax * chord;
            // Gradient of the chord integrand at both ends: Pᵀp_k and Pᵀ(p_k + Δp).
            for i in 0..d {
                let (mut ga, mut gb) = (0.0, 0.0);
                for a in 0..rows {
                    ga += p[(a, i)] * pk[a];
                    gb += p[(a, i)] * (pk[a] + dp[a]);
                }
                let s = 2.0 * wmax * ga.abs().max(gb.abs());
                var += s * s * h * h * h / 12.0;
            }
        }
        let z = std::f64::consts::SQRT_2 * erfc_inv(eta);
        let lin = z * var.sqrt();
        let pnorm = f.p.clone().svd(false, false).singular_values.max();
        let wsup = f.weight.at(0.0).max(f.weight.at(1.0));
        let quad = wsup * pnorm * pnorm * bridge_square_bound(h, (n * d) as f64, eta);
        let q_lo = (chord_lo - lin).max(0.0);
        let q_hi = chord_hi + lin + quad;
        let q_mid = 0.5 * (chord_lo + chord_hi);
        centre += f.q * q_mid;
        if f.q > 0.0 {
            lo_extra += f.q * (q_mid - q_lo);
            hi_extra += f.q * (q_hi - q_mid);
        } else {
            lo_extra += -f.q * (q_hi - q_mid);
            hi_extra += -f.q * (q_mid - q_lo);
        }
    }
    (centre - lo_extra, centre + hi_extra)
}

/// The augmented `(L, X)` system driven by one skeleton.
#[derive(Debug, Clone)]
pub struct LikelihoodHandle {
    functional: LikelihoodFunctional,
    skeleton: BrownianSkeleton,
    caps: Caps,
    start_level: u32,
}

pub const START_LEVEL: u32 = 4;

impl LikelihoodHandle {
    pub fn new(functional: LikelihoodFunctional, rng: Stream, caps: Caps) -> Self {
        let skeleton = BrownianSkeleton::new(functional.dim, rng);
        LikelihoodHandle {
            functional,
            skeleton,
            caps,
            start_level: START_LEVEL,
        }
    }

    pub fn level(&self) -> u32 {
        self.skeleton.level()
    }

    pub fn skeleton(&self) -> &BrownianSkeleton {
        &self.skeleton
    }

    /// Exact terminal state `X(1)`.
    pub fn terminal_state(&self) -> DVector<f64> {
        self.functional.terminal_state(&self.skeleton.terminal())
    }

    /// Certified interval of `L(1)` at the current level.
    pub fn likelihood_bounds(&self) -> Result<(f64, f64)> {
        let (lo, hi) = log_likelihood_bounds(&self.functional, &self.skeleton);
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return Err(SdeError::NumericalIntegrity(format!("log L interval [{lo}, {hi}]")));
        }
        Ok((lo.exp(), hi.exp()))
    }

    /// Refine until the certified interval of `L(1)` lies in one cell of the
    /// half-open partition induced by `cell`, and return that cell. Cheaper
    /// than halving a tolerance: a path far from every boundary is settled on
    /// the first level whose interval clears it.
    pub fn locate(&mut self, cell: impl Fn(f64) -> i64) -> Result<i64> {
        let first = self.skeleton.level().max(self.start_level);
        for level in first..=self.caps.ceiling() {
            self.skeleton.refine_to(level);
            let (lo, hi) = self.likelihood_bounds()?;
            let c = cell(lo);
            if c == cell(hi) {
                return Ok(c);
            }
        }
        Err(SdeError::BudgetExhausted {
            stage: StageTag::Localization,
            spent: (self.caps.ceiling() + 1).saturating_sub(first) as u64,
            last_eps: f64::NAN,
        })
    }
}

impl TerminalRefiner for LikelihoodHandle {
    fn terminal_within(&mut self, eps: f64) -> Result<Terminal> {
        let mut level = self.skeleton.level().max(self.start_level);
        loop {
            if level > self.caps.ceiling() {
                return Err(SdeError::BudgetExhausted {
                    stage: StageTag::Refinement,
                    spent: self.skeleton.level() as u64,
                    last_eps: eps,
                });
            }
            self.skeleton.refine_to(level);
            let (lo, hi) = self.likelihood_bounds()?;
            let half = 0.5 * (hi - lo);
            if half <= eps {
                let mut value = vec![0.5 * (lo + hi)];
                value.extend(self.terminal_state().iter());
                return Ok(Terminal {
                    value,
                    certificate: half,
                    level,
                });
            }
            level += 1;
        }
    }
}
