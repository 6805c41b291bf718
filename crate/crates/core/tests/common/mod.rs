#![allow(dead_code)]

use std::f64::consts::PI;
use std::io::Write;
use std::sync::Arc;

use exact_sde::general::ScheduleSource;
use exact_sde::multilevel::Schedule;

pub fn phi(z: f64) -> f64 {
    (-z * z / 2.0).exp() / (2.0 * PI).sqrt()
}

/// `min φ(y − x0)` over `y ∈ [lo, hi]`.
pub fn min_density(lo: f64, hi: f64, x0: f64) -> f64 {
    phi((lo - x0).abs().max((hi - x0).abs()))
}

/// `sup |φ'(y − x0)|` over `y ∈ [lo, hi]`; `|φ'(z)| = |z| φ(z)` peaks at `|z| = 1`.
pub fn lipschitz(lo: f64, hi: f64, x0: f64) -> f64 {
    let (a, b) = (lo - x0, hi - x0);
    let near = if a <= 0.0 && b >= 0.0 { 0.0 } else { a.abs().min(b.abs()) };
    let far = a.abs().max(b.abs());
    let f = |z: f64| z * phi(z);
    if near <= 1.0 && far >= 1.0 {
        f(1.0)
    } else {
        f(near).max(f(far))
    }
}

/// Two-pass closed-form schedule for one-dimensional Brownian motion from `x0`.
pub fn brownian_schedule(cube: i64, x0: f64) -> Schedule {
    let i = cube as f64;
    let provisional = (min_density(i - 1.0, i + 2.0, x0), lipschitz(i - 1.0, i + 2.0, x0));
    let r1 = 3.0 * provisional.0 / (2.0 * PI * PI * provisional.1);
    let last = (min_density(i - r1, i + 1.0 + r1, x0), lipschitz(i - r1, i + 1.0 + r1, x0));
    Schedule::two_pass(1, provisional, last).unwrap()
}

pub fn brownian_schedules(x0: f64) -> ScheduleSource {
    ScheduleSource::Custom(Arc::new(move |c: &[i64]| Ok(brownian_schedule(c[0], x0))))
}

/// One acceptance line, written past the test harness capture.
pub fn verdict(id: u32, name: &str, pass: bool, detail: &str) {
    let line = format!("criterion {id:>2} [{}] {name}: {detail}\n", if pass { "PASS" } else { "FAIL" });
    let mut e = std::io::stderr();
    let _ = e.write_all(line.as_bytes());
    let _ = e.flush();
}
