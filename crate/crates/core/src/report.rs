//! Validation suites, runtime-tail reports and the constants ledger.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use serde_json::{Map, Value};

use crate::config::RunConfig;
use crate::constants::{compute_lipschitz, compute_lower_bound, ConstantInputs, SetDescriptor};
use crate::error::{Result, SdeError};
use crate::harness::{run_samples, Run, Summary};
use crate::model::{build_model, DiffusionKind, Drift, SdeSpec};
use crate::rng::{substream, Stage};
use crate::stats::{bonferroni, ks_one_sample, normal_cdf};

pub const ALPHA: f64 = 0.01;

/// Marginal mean and standard deviation of `X(1)` for a linear SDE with
/// identity diffusion: `e^{B}x0 + ∫₀¹ e^{Bs}c ds` and `∫₀¹ e^{Bs}e^{Bᵀs} ds`.
pub fn linear_oracle(spec: &SdeSpec) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let (b, c) = match (&spec.drift, &spec.kind) {
        (Drift::Linear { b, c }, DiffusionKind::IdentityDiffusion) => (b, c),
        _ => {
            return Err(SdeError::Capability(format!(
                "no closed-form oracle registered for model '{}'",
                spec.name
            )))
        }
    };
    let t = spec.horizon;
    let x0 = DVector::from_column_slice(&spec.x0);
    let steps = 2000;
    let h = t / steps as f64;
    let d = spec.dim_state;
    let mut int_c = DVector::zeros(d);
    let mut cov = DMatrix::zeros(d, d);
    for k in 0..=steps {
        let w = if k == 0 || k == steps { 1.0 } else if k % 2 == 1 { 4.0 } else { 2.0 };
        let e = (b * (k as f64 * h)).exp();
        int_c += &e * c * (w * h / 3.0);
        cov += &e * e.transpose() * (w * h / 3.0);
    }
    Ok(((b * t).exp() * x0 + int_c, cov))
}

/// Euler scheme with `steps` equal steps, as a deliberately biased control.
pub fn euler_samples(spec: &SdeSpec, steps: usize, n: u64, seed: u64, coord: usize) -> Result<Vec<f64>> {
    let h = spec.horizon / steps as f64;
    let mut out = Vec::with_capacity(n as usize);
    for i in 0..n {
        let mut rng = substream(seed, i, Stage::Test);
        let mut x = spec.x0.clone();
        for _ in 0..steps {
            let f = spec.drift(&x)?;
            for (xi, fi) in x.iter_mut().zip(f) {
                *xi += fi * h + h.sqrt() * rng.normal();
            }
        }
        out.push(x[coord]);
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize)]
pub struct TestEntry {
    pub name: String,
    pub statistic: f64,
    pub p_value: f64,
    pub alpha: f64,
    /// The control is expected to be rejected.
    pub expect_reject: bool,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    pub summary: Summary,
    pub tests: Vec<TestEntry>,
    pub passed: bool,
}

/// KS of every coordinate against the closed-form law at a Bonferroni
/// level, plus the Euler control expected to fail at `ALPHA`.
pub fn validate(cfg: &RunConfig) -> Result<(ValidationReport, Run)> {
    let spec = build_model(&cfg.model, &cfg.params)?;
    let (mean, cov) = linear_oracle(&spec)?;
    let run = run_samples(cfg)?;
    let d = spec.dim_state;
    let alpha = bonferroni(ALPHA, d);
    let mut tests = Vec::new();
    for i in 0..d {
        let xs = run.values(i);
        let (m, s) = (mean[i], cov[(i, i)].sqrt());
        let r = ks_one_sample(&xs, |x| normal_cdf((x - m) / s));
        let pass = xs.len() >= 2 && r.passes(alpha);
        tests.push(TestEntry {
            name: format!("ks-x_{}", i + 1),
            statistic: r.statistic,
            p_value: r.p_value,
            alpha,
            expect_reject: false,
            pass,
        });
    }
    let control = euler_samples(&spec, 2, 10_000, cfg.seed, 0)?;
    let (m, s) = (mean[0], cov[(0, 0)].sqrt());
    let r = ks_one_sample(&control, |x| normal_cdf((x - m) / s));
    tests.push(TestEntry {
        name: "euler-control-x_1".into(),
        statistic: r.statistic,
        p_value: r.p_value,
        alpha: ALPHA,
        expect_reject: true,
        pass: !r.passes(ALPHA),
    });
    let passed = tests.iter().all(|t| t.pass);
    Ok((
        ValidationReport {
            summary: run.summary.clone(),
            tests,
            passed,
        },
        run,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SurvivalPoint {
    pub work: u64,
    /// Fraction of samples with work strictly above `work`.
    pub survival: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TailFit {
    pub slope: f64,
    pub slope_stderr: f64,
    /// `−slope` with a 95% interval.
    pub tail_index: f64,
    pub tail_index_ci: (f64, f64),
    pub points: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct TailReport {
    pub requested: u64,
    pub accepted: u64,
    pub failed: u64,
    pub failure_fraction: f64,
    pub survival: Vec<SurvivalPoint>,
    /// Least-squares fit of log S against log work over the upper 20%.
    pub fit: Option<TailFit>,
}

/// Empirical survival of per-sample work over all samples, failures
/// included at the work they spent.
pub fn survival(work: &[u64]) -> Vec<SurvivalPoint> {
    let mut w = work.to_vec();
    w.sort_unstable();
    let n = w.len() as f64;
    let mut out = Vec::new();
    let mut i = 0;
    while i < w.len() {
        let mut j = i;
        while j < w.len() && w[j] == w[i] {
            j += 1;
        }
        out.push(SurvivalPoint {
            work: w[i],
            survival: (w.len() - j) as f64 / n,
        });
        i = j;
    }
    out
}

pub fn fit_tail(points: &[SurvivalPoint]) -> Option<TailFit> {
    let xy: Vec<(f64, f64)> = points
        .iter()
        .filter(|p| p.survival > 0.0 && p.survival <= 0.2 && p.work > 0)
        .map(|p| ((p.work as f64).ln(), p.survival.ln()))
        .collect();
    let k = xy.len();
    if k < 3 {
        return None;
    }
    let mx = xy.iter().map(|p| p.0).sum::<f64>() / k as f64;
    let my = xy.iter().map(|p| p.1).sum::<f64>() / k as f64;
    let sxx: f64 = xy.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx <= 0.0 {
        return None;
    }
    let slope = xy.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>() / sxx;
    let resid: f64 = xy.iter().map(|p| (p.1 - my - slope * (p.0 - mx)).powi(2)).sum();
    let se = (resid / (k as f64 - 2.0) / sxx).sqrt();
    Some(TailFit {
        slope,
        slope_stderr: se,
        tail_index: -slope,
        tail_index_ci: (-slope - 1.96 * se, -slope + 1.96 * se),
        points: k,
    })
}

pub fn tails(run: &Run) -> TailReport {
    let work: Vec<u64> = run.rows.iter().map(|r| r.work).collect();
    let survival = survival(&work);
    let fit = fit_tail(&survival);
    TailReport {
        requested: run.summary.requested,
        accepted: run.summary.accepted,
        failed: run.summary.failed,
        failure_fraction: run.summary.failure_rate,
        survival,
        fit,
    }
}

pub fn survival_csv(report: &TailReport) -> String {
    let mut s = String::from("work,survival\n");
    for p in &report.survival {
        s.push_str(&format!("{},{}\n", p.work, p.survival));
    }
    s
}

/// Both appendix ledgers for the cube `cfg.cell` enlarged by `cfg.enlarge`,
/// as one flat JSON object.
pub fn constants_json(cfg: &RunConfig) -> Result<Value> {
    let spec = build_model(&cfg.model, &cfg.params)?;
    if cfg.cell.len() != spec.dim_state {
        return Err(SdeError::Config(format!(
            "key 'cell': {} entries for a {}-dimensional model",
            cfg.cell.len(),
            spec.dim_state
        )));
    }
    let b = &spec.bounds;
    let inp = ConstantInputs {
        m: b.m_bound,
        lambda_down: b.lambda_down,
        lambda_up: b.lambda_up,
        d: spec.dim_state,
        t: spec.horizon,
        eps: cfg.parametrix_eps,
    };
    let set = SetDescriptor::enlarged_cube(&cfg.cell, cfg.enlarge);
    let lip = compute_lipschitz(&inp, set.inf_dist(&spec.x0))?;
    let low = compute_lower_bound(&set, &spec.x0, &inp)?;
    let mut out = Map::new();
    out.insert("model".into(), Value::from(spec.name.clone()));
    out.insert("cell".into(), serde_json::to_value(&cfg.cell).expect("cell serializes"));
    out.insert("enlarge".into(), Value::from(cfg.enlarge));
    for (prefix, v) in [("", serde_json::to_value(&lip)), ("lower_", serde_json::to_value(&low))] {
        let Value::Object(m) = v.expect("ledgers serialize") else { unreachable!() };
        for (k, v) in m {
            let key = if k == "note" || k == "inputs" { format!("{prefix}{k}") } else { k };
            out.insert(key, v);
        }
    }
    Ok(Value::Object(out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Params;

    fn cfg(text: &str) -> RunConfig {
        let mut c = RunConfig::default();
        c.apply_text(text).unwrap();
        c
    }

    #[test]
    fn ou_oracle_matches_closed_form() {
        let s = build_model("ou", &Params::new()).unwrap();
        let (m, c) = linear_oracle(&s).unwrap();
        assert!((m[0] - (-1f64).exp()).abs() < 1e-10);
        assert!((c[(0, 0)] - (1.0 - (-2f64).exp()) / 2.0).abs() < 1e-10);
    }

    #[test]
    fn rotational_oracle_is_orthogonal_flow() {
        let s = build_model("rotational", &Params::new()).unwrap();
        let (m, c) = linear_oracle(&s).unwrap();
        assert!((m[0] - 1f64.cos()).abs() < 1e-10 && (m[1] + 1f64.sin()).abs() < 1e-10);
        assert!((c.clone() - DMatrix::identity(2, 2)).amax() < 1e-10);
    }

    #[test]
    fn ou_validation_passes_and_control_fails() {
        let (rep, _) = validate(&cfg("model = ou\nn = 2000")).unwrap();
        assert!(rep.passed, "{:?}", rep.tests);
        assert!(rep.tests.iter().any(|t| t.expect_reject && t.p_value < ALPHA));
    }

    #[test]
    fn survival_is_monotone_and_accounts() {
        let s = survival(&[1, 1, 2, 5, 5, 5, 9]);
        assert_eq!(s.iter().map(|p| p.work).collect::<Vec<_>>(), vec![1, 2, 5, 9]);
        assert!(s.windows(2).all(|w| w[0].survival >= w[1].survival));
        assert_eq!(s.last().unwrap().survival, 0.0);
        assert!((s[0].survival - 5.0 / 7.0).abs() < 1e-15);
    }

    #[test]
    fn pareto_tail_index() {
        // Work = floor(1/U): P(W > x) ≈ 1/x, tail index 1.
        let mut r = crate::rng::Stream::from_seed(8);
        let w: Vec<u64> = (0..20_000).map(|_| (1.0 / r.uniform()).floor() as u64).collect();
        let f = fit_tail(&survival(&w)).unwrap();
        assert!((f.tail_index - 1.0).abs() < 0.1, "{f:?}");
    }

    #[test]
    fn constants_keys() {
        let v = constants_json(&cfg("model = bm")).unwrap();
        for k in ["C0", "C8", "CS", "CBDG3", "CBDG4", "Psi1", "Psi4", "Jup", "DS", "deltaS"] {
            assert!(v.get(k).is_some(), "{k}");
        }
        assert!(constants_json(&cfg("model = bm\ncell = 0,0")).is_err());
    }
}
