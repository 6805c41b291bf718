//! The ten acceptance criteria, one test each. Every test writes a single
//! `criterion N [PASS|FAIL]` line to stderr and then asserts it.

mod common;

use std::f64::consts::PI;

use common::{brownian_schedules, min_density, lipschitz, phi, verdict};
use exact_sde::config::RunConfig;
use exact_sde::constants::{c_bdg, compute_lipschitz, compute_lower_bound, psi, ConstantInputs, SetDescriptor};
use exact_sde::factory::{flip_linear, FactorySpec, DEFAULT_PULL_CAP};
use exact_sde::general::{sample_n_prime, sample_x_conditional, synthetic::BernoulliFamily, GeneralCaps, GeneralSampler, ScheduleSource, StageCost};
use exact_sde::harness::run_samples;
use exact_sde::model::{build_model, Params};
use exact_sde::multilevel::{level_pmf, sample_lambda_plus, sample_level, LambdaSampler, Schedule};
use exact_sde::report::linear_oracle;
use exact_sde::rng::{substream, Stage, Stream};
use exact_sde::source::TerminalSource;
use exact_sde::stats::{binomial_test, chi_square, ks_one_sample, mean_stderr, normal_cdf};
use exact_sde::tes::{open, Caps};

fn cfg(text: &str) -> RunConfig {
    let mut c = RunConfig::default();
    c.apply_text(text).unwrap();
    c
}

#[test]
fn criterion_01_constant_diffusion_exactness() {
    let run = run_samples(&cfg("model = ou\nparam.theta = 1\nparam.x1 = 1\nn = 10000\nseed = 101")).unwrap();
    let xs = run.values(0);
    let (m, s) = ((-1f64).exp(), ((1.0 - (-2f64).exp()) / 2.0).sqrt());
    let ks = ks_one_sample(&xs, |x| normal_cdf((x - m) / s));
    let rate = run.summary.failure_rate;
    let pass = ks.passes(0.01) && rate < 0.01 && xs.len() >= 9900;
    let detail = format!(
        "OU θ=1 x0=1, {} accepted, KS D={:.4} p={:.3}, failure rate {:.4}",
        xs.len(),
        ks.statistic,
        ks.p_value,
        rate
    );
    verdict(1, "constant-diffusion exactness", pass, &detail);
    assert!(pass, "{detail}");
}

#[test]
fn criterion_02_non_gradient_drift() {
    let run = run_samples(&cfg("model = rotational\nn = 2000\nseed = 202")).unwrap();
    let spec = build_model("rotational", &Params::new()).unwrap();
    let (mean, cov) = linear_oracle(&spec).unwrap();
    let mut pass = true;
    let mut parts = Vec::new();
    for i in 0..2 {
        let xs = run.values(i);
        let (m, s) = (mean[i], cov[(i, i)].sqrt());
        let ks = ks_one_sample(&xs, |x| normal_cdf((x - m) / s));
        pass &= ks.passes(0.01);
        parts.push(format!("x_{} p={:.3}", i + 1, ks.p_value));
    }
    let detail = format!(
        "rotational ω=1, {} accepted, {}, budget-failure rate {:.4} (not asserted; the dropped samples are large-L(1) paths the grid cap cannot localize)",
        run.summary.accepted,
        parts.join(", "),
        run.summary.failure_rate
    );
    verdict(2, "non-gradient drift coverage", pass, &detail);
    assert!(pass, "{detail}");
}

#[test]
fn criterion_03_multilevel_unbiasedness() {
    let bm = build_model("bm", &Params::new()).unwrap();
    let src = TerminalSource::for_model(&bm, Caps::default()).unwrap();
    let mut rng = Stream::from_seed(303);
    let mut pass = true;
    let mut parts = Vec::new();
    for x in [-0.8f64, -0.3, 0.1, 0.5, 0.9] {
        let s = Schedule::resolve(&bm, &[x.floor() as i64], 0.5).unwrap();
        let draws: Vec<f64> = (0..1_000_000)
            .map(|_| {
                let n = sample_level(&mut rng);
                LambdaSampler::new(&s, n, &[x], &src).draw(&mut rng).unwrap()
            })
            .collect();
        let (m, se) = mean_stderr(&draws);
        let ok = se > 0.0 && (m - phi(x)).abs() <= 4.0 * se;
        pass &= ok;
        parts.push(format!("x={x}: {m:.3}±{se:.3} vs {:.3}", phi(x)));
        for n in [1u64, 2, 4] {
            let ls = LambdaSampler::new(&s, n, &[x], &src);
            let v: Vec<f64> = (0..100_000).map(|_| ls.draw(&mut rng).unwrap()).collect();
            let (m, se) = mean_stderr(&v);
            let ok = m + 4.0 * se >= s.delta / 2.0 && m - 4.0 * se <= 1.0 + s.delta / 2.0;
            if !ok {
                parts.push(format!("band n={n} at x={x}: {m:.3}±{se:.3} outside [{:.2e}, {:.3}]", s.delta / 2.0, 1.0 + s.delta / 2.0));
            }
            pass &= ok;
        }
    }
    let detail = format!("BM, 1e6 draws of Λ_N per point; {}", parts.join("; "));
    verdict(3, "multilevel density unbiasedness", pass, &detail);
    assert!(pass, "{detail}");
}

#[test]
fn criterion_04_lambda_plus_identity() {
    let bm = build_model("bm", &Params::new()).unwrap();
    let src = TerminalSource::for_model(&bm, Caps::default()).unwrap();
    let s = Schedule::resolve(&bm, &[0], 0.5).unwrap();
    let x = [0.3];
    let mut rng = Stream::from_seed(404);
    let z = 2.576;
    let mut parts = Vec::new();

    let ls = LambdaSampler::new(&s, 1, &x, &src);
    let m1 = s.m_bound(1);
    let mut plus = Vec::with_capacity(100_000);
    let mut violations = 0;
    for _ in 0..100_000 {
        let v = sample_lambda_plus(&ls, &mut rng, DEFAULT_PULL_CAP).unwrap().value;
        violations += !(0.0..=m1).contains(&v) as u32;
        plus.push(v);
    }
    let raw: Vec<f64> = (0..100_000).map(|_| ls.draw(&mut rng).unwrap()).collect();
    let (a, sa) = mean_stderr(&plus);
    let (b, sb) = mean_stderr(&raw);
    let overlap1 = (a - b).abs() <= z * (sa + sb);
    parts.push(format!("n=1: Λ⁺ {a:.3}±{sa:.3} vs Λ {b:.3}±{sb:.3}, {violations} range violations"));

    // n = 2: a pilot decides whether 1e5 emissions are attainable under the cap.
    let ls2 = LambdaSampler::new(&s, 2, &x, &src);
    let m2 = s.m_bound(2);
    let pilot = 20;
    let mut ok2 = Vec::new();
    let mut failed2 = 0;
    for _ in 0..pilot {
        match sample_lambda_plus(&ls2, &mut rng, DEFAULT_PULL_CAP) {
            Ok(l) => {
                violations += !(0.0..=m2).contains(&l.value) as u32;
                ok2.push(l.value);
            }
            Err(e) if e.is_budget() => failed2 += 1,
            Err(e) => panic!("{e}"),
        }
    }
    let feasible2 = failed2 == 0;
    let mut overlap2 = false;
    if feasible2 {
        let mut f = 0;
        while ok2.len() < 100_000 && f == 0 {
            match sample_lambda_plus(&ls2, &mut rng, DEFAULT_PULL_CAP) {
                Ok(l) => {
                    violations += !(0.0..=m2).contains(&l.value) as u32;
                    ok2.push(l.value);
                }
                Err(_) => f += 1,
            }
        }
        let raw2: Vec<f64> = (0..100_000).map(|_| ls2.draw(&mut rng).unwrap()).collect();
        let (a, sa) = mean_stderr(&ok2);
        let (b, sb) = mean_stderr(&raw2);
        overlap2 = f == 0 && (a - b).abs() <= z * (sa + sb);
        parts.push(format!("n=2: Λ⁺ {a:.3}±{sa:.3} vs Λ {b:.3}±{sb:.3}"));
    } else {
        parts.push(format!(
            "n=2: {failed2}/{pilot} pilot emissions exhausted the {DEFAULT_PULL_CAP}-pull cap (factory scale {:.2e}); 1e5 draws unattainable",
            s.ladder_scale(2)
        ));
    }
    let pass = overlap1 && overlap2 && violations == 0;
    let detail = parts.join("; ");
    verdict(4, "Λ⁺ identity", pass, &detail);
    assert!(pass, "{detail}");
}

#[test]
fn criterion_05_bernoulli_factory() {
    let mut pass = true;
    let mut parts = Vec::new();
    let eps = 0.5;
    for target in [0.05, 0.25, 0.45] {
        for alpha in [1.5, 4.0, 10.0] {
            let p = target / alpha;
            let mut rng = substream(505, (alpha * 10.0) as u64, Stage::Factory);
            let mut coin = |r: &mut Stream| Ok(r.bernoulli(p));
            let spec = FactorySpec::new(alpha, eps).unwrap();
            let n = 100_000u64;
            let (mut ones, mut pulls) = (0u64, 0u64);
            for _ in 0..n {
                let f = flip_linear(&mut coin, spec, &mut rng, DEFAULT_PULL_CAP).unwrap();
                ones += f.bit as u64;
                pulls += f.pulls;
            }
            let mean_pulls = pulls as f64 / n as f64;
            let bt = binomial_test(ones, n, target);
            let ok = bt.passes(0.01) && mean_pulls <= 10.0 * alpha / eps;
            pass &= ok;
            parts.push(format!("α={alpha} αp={target}: p={:.3} pulls={mean_pulls:.1}", bt.p_value));
        }
    }
    let detail = parts.join(", ");
    verdict(5, "Bernoulli factory exactness", pass, &detail);
    assert!(pass, "{detail}");
}

fn inputs(m: f64) -> ConstantInputs {
    ConstantInputs {
        m,
        lambda_down: 1.0,
        lambda_up: 1.0,
        d: 1,
        t: 1.0,
        eps: 0.5,
    }
}

#[test]
fn criterion_06_constants_golden() {
    // Line-by-line oracle, evaluated here without the library.
    let c0_oracle = 1.0 / (2.0 * PI).sqrt() * (0.5f64).sqrt();
    let bdg = |p: f64| {
        let inner = p * (p - 1.0) / 2.0;
        let ratio = (p / (p - 1.0)).powf(p);
        (inner * ratio).powf(p / 2.0)
    };
    let c0 = compute_lipschitz(&inputs(1.0), 0.0).unwrap().c0;
    let (b3, b4) = (c_bdg(3.0), c_bdg(4.0));
    let psi1 = psi(1, 0.0, &inputs(1.0));
    let pass = (c0 - 0.2820948).abs() < 1e-7
        && (c0 - c0_oracle).abs() < 1e-12
        && (b3 - bdg(3.0)).abs() < 1e-3
        && (b4 - bdg(4.0)).abs() < 1e-2
        && (b3 - 32.217553).abs() < 1e-3
        && (b4 - 359.593964).abs() < 1e-2
        && psi1 == 2.0;
    let detail = format!(
        "C0={c0:.7}, C_BDG(3)={b3:.6} (printed 32.2089, Δ={:.1e}), C_BDG(4)={b4:.6} (printed 359.637, Δ={:.1e}), Ψ1={psi1}; pinned to the independent recomputation",
        b3 - 32.2089,
        b4 - 359.637
    );
    verdict(6, "constants golden values", pass, &detail);
    assert!(pass, "{detail}");
}

#[test]
fn criterion_07_bound_soundness() {
    let mut rng = Stream::from_seed(707);
    let (mut delta_bad, mut c_bad) = (0, 0);
    let mut worst = String::new();
    for _ in 0..10 {
        let x0 = 2.0 * rng.uniform() - 1.0;
        let cell = (5.0 * rng.uniform()).floor() as i64 - 2;
        let r = 0.5 * rng.uniform();
        let set = SetDescriptor::enlarged_cube(&[cell], r);
        let (lo, hi) = (cell as f64 - r, cell as f64 + 1.0 + r);
        let low = compute_lower_bound(&set, &[x0], &inputs(0.0)).unwrap();
        let lip = compute_lipschitz(&inputs(0.0), set.inf_dist(&[x0])).unwrap();
        let (dmin, lmax) = (min_density(lo, hi, x0), lipschitz(lo, hi, x0));
        if low.delta_s > dmin {
            delta_bad += 1;
        }
        if lip.c_s < lmax {
            c_bad += 1;
            worst = format!("x0={x0:.3} S=[{lo:.3},{hi:.3}]: C_S={:.4} < sup|φ'|={lmax:.4}", lip.c_s);
        }
    }
    let pass = delta_bad == 0 && c_bad == 0;
    let detail = format!("10 BM configurations: δ_S violations {delta_bad}, C_S violations {c_bad}{}{worst}", if worst.is_empty() { "" } else { "; e.g. " });
    verdict(7, "bound soundness", pass, &detail);
    assert!(pass, "{detail}");
}

#[test]
fn criterion_08_eps_strong_certificates() {
    let bm = build_model("bm", &Params::new()).unwrap();
    let tolerances = [0.5, 0.45, 0.4, 0.35, 0.3];
    let mut violations = 0;
    let mut checks = 0u64;
    let mut short = 0;
    for path in 0..100u64 {
        let (first, mut h) = open(&bm, tolerances[0], substream(808, path, Stage::Path), Caps::default()).unwrap();
        let mut emitted = vec![first];
        for e in &tolerances[1..] {
            emitted.push(h.refine(*e).unwrap());
        }
        let top = emitted.iter().map(|p| p.level).max().unwrap();
        let fine_level = (top + 10).min(Caps::default().ceiling());
        short += (fine_level < top + 10) as u32;
        let fine = h.at_level(fine_level).unwrap();
        for p in &emitted {
            let ratio = 1usize << (fine_level - p.level);
            for (k, cert) in p.certificate.iter().enumerate() {
                let v = p.values[k][0];
                let dev = fine.values[k * ratio..=(k + 1) * ratio]
                    .iter()
                    .map(|w| (w[0] - v).abs())
                    .fold(0.0, f64::max);
                checks += 1;
                violations += (dev > *cert) as u32;
            }
        }
    }
    let pass = violations == 0 && short == 0;
    let detail = format!("100 BM paths × 5 tolerances, {checks} cells checked at +10 levels: {violations} violations, {short} paths short of +10 levels");
    verdict(8, "ε-strong certificates", pass, &detail);
    assert!(pass, "{detail}");
}

/// `g_n(x) = 0.2 + 0.6 xⁿ` on `[0, 1)`: the coupling law puts mass
/// `P(N=n)(0.2 + 0.6/(n+1))` on level `n`.
fn synthetic_mean(n: u64, x: &[f64]) -> f64 {
    0.2 + 0.6 * x[0].powi(n.min(i32::MAX as u64) as i32)
}

/// Brute-force quadrature of the x-marginal CDF of the coupling law.
fn quadrature_cdf(levels: u64, grid: usize) -> Vec<f64> {
    let h = 1.0 / grid as f64;
    let mut dens = vec![0.0; grid + 1];
    for n in 1..=levels {
        let w = level_pmf(n);
        for (k, d) in dens.iter_mut().enumerate() {
            *d += w * synthetic_mean(n, &[k as f64 * h]);
        }
    }
    // Levels beyond `levels` contribute P(N > levels)·0.2 away from x = 1.
    let tail = 1.0 / (levels as f64 + 1.0);
    for d in dens.iter_mut() {
        *d += tail * 0.2;
    }
    let mut cdf = vec![0.0; grid + 1];
    for k in 1..=grid {
        cdf[k] = cdf[k - 1] + 0.5 * h * (dens[k - 1] + dens[k]);
    }
    let z = cdf[grid];
    cdf.iter().map(|c| c / z).collect()
}

#[test]
fn criterion_09_general_sampler_reduced_scale() {
    let mut parts = Vec::new();

    // Synthetic family through Algorithms 5 and 6.
    let fam = BernoulliFamily {
        dim: 1,
        m: 1.0,
        bound: 0.8,
        mean: synthetic_mean,
    };
    let mut rng = Stream::from_seed(909);
    let caps = GeneralCaps::default();
    let mut cost = StageCost::default();
    let mut xs = Vec::new();
    let mut levels = vec![0u64; 8];
    for _ in 0..5000 {
        let n = sample_n_prime(&fam, &[0], caps, &mut rng, &mut cost).unwrap();
        levels[(n as usize).min(8) - 1] += 1;
        xs.push(sample_x_conditional(&fam, &[0], n, caps, &mut rng, &mut cost).unwrap()[0]);
    }
    let grid = 20_000;
    let cdf = quadrature_cdf(20_000, grid);
    let ks = ks_one_sample(&xs, |x| {
        let p = (x * grid as f64).clamp(0.0, grid as f64);
        let k = (p.floor() as usize).min(grid - 1);
        cdf[k] + (p - k as f64) * (cdf[k + 1] - cdf[k])
    });
    let w: Vec<f64> = (1..=7).map(|n| level_pmf(n) * (0.2 + 0.6 / (n as f64 + 1.0))).collect();
    let z: f64 = w.iter().sum::<f64>() + (8..=2_000_000u64).map(|n| level_pmf(n) * (0.2 + 0.6 / (n as f64 + 1.0))).sum::<f64>();
    let mut probs: Vec<f64> = w.iter().map(|v| v / z).collect();
    probs.push(1.0 - probs.iter().sum::<f64>());
    let chi = chi_square(&levels, &probs);
    let synthetic_ok = ks.passes(0.01) && chi.passes(0.01);
    parts.push(format!("synthetic coupling law: KS p={:.3}, level χ² p={:.3}", ks.p_value, chi.p_value));

    // BM d = 1 through Algorithm 3 with certified closed-form constants.
    let bm = build_model("bm", &Params::new()).unwrap();
    let caps = GeneralCaps {
        attempts: 100_000,
        factory_pulls: 1_000_000,
        lambda_pulls: 1_000,
    };
    let mut g = GeneralSampler::new(&bm, Caps::default(), caps).unwrap().with_schedules(brownian_schedules(0.0));
    let (mut vals, mut failed) = (Vec::new(), 0);
    for i in 0..2000 {
        match g.sample(909, i, 1e-6) {
            Ok(r) => vals.push(r.value[0]),
            Err(e) if e.is_budget() => failed += 1,
            Err(e) => panic!("{e}"),
        }
    }
    let bm_ks = ks_one_sample(&vals, normal_cdf);
    let rate = failed as f64 / 2000.0;
    let bm_ok = rate < 0.01 && vals.len() >= 2 && bm_ks.passes(0.01);
    parts.push(format!(
        "BM end-to-end (closed-form constants, Λ⁺ cap 1e3): {} accepted, failure rate {rate:.3}, KS p={:.3} on accepted",
        vals.len(),
        bm_ks.p_value
    ));

    // Short pilot with the appendix constants.
    let mut g = GeneralSampler::new(&bm, Caps::default(), caps).unwrap().with_schedules(ScheduleSource::Appendix { eps: 0.5 });
    let pilot_failed = (0..20).filter(|i| g.sample(910, *i, 1e-6).is_err()).count();
    parts.push(format!("appendix-constant pilot: {pilot_failed}/20 failed"));

    let pass = synthetic_ok && bm_ok;
    let detail = parts.join("; ");
    verdict(9, "general sampler at reduced scale", pass, &detail);
    assert!(pass, "{detail}");
}

#[test]
fn criterion_10_runtime_tail_report() {
    let dir = std::env::temp_dir().join(format!("exact-sde-tails-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let out = dir.join("samples.csv");
    let bin = env!("CARGO_BIN_EXE_exact-sde");
    let o = std::process::Command::new(bin)
        .args(["tails", "--model", "ou", "--n", "1000", "--seed", "10", "--caps.refinement", "9", "--out"])
        .arg(&out)
        .output()
        .unwrap();
    let report: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let text = std::fs::read_to_string(&out).unwrap();
    let failed_rows = text.lines().skip(1).filter(|l| l.split(',').nth(1) == Some("failed")).count() as u64;
    let rows = text.lines().count() as u64 - 1;
    let surv: Vec<f64> = report["survival"].as_array().unwrap().iter().map(|p| p["survival"].as_f64().unwrap()).collect();
    let monotone = surv.windows(2).all(|w| w[0] >= w[1]);
    let fit = &report["fit"];
    let accounting = report["failed"].as_u64() == Some(failed_rows)
        && report["requested"].as_u64() == Some(rows)
        && report["accepted"].as_u64().unwrap() + failed_rows == 1000
        && report["failure_fraction"].as_f64() == Some(failed_rows as f64 / 1000.0);
    let survival_file = std::fs::read_to_string(exact_sde::harness::sidecar(&out, ".survival.csv")).is_ok();
    let pass = o.status.success() && monotone && accounting && !fit.is_null() && survival_file;
    let detail = format!(
        "ou, 1000 samples: {failed_rows} failure rows, report failed={}, monotone={monotone}, tail index {} CI {}",
        report["failed"], fit["tail_index"], fit["tail_index_ci"]
    );
    std::fs::remove_dir_all(&dir).ok();
    verdict(10, "runtime-tail report", pass, &detail);
    assert!(pass, "{detail}");
}
