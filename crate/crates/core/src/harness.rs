//! Sample runs: engine selection, per-sample rows and output files.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::DVector;
use serde::Serialize;

use crate::config::{Format, RunConfig, SamplerKind};
use crate::error::{Result, SdeError};
use crate::general::{GeneralSampler, ScheduleSource};
use crate::girsanov::GirsanovSampler;
use crate::model::{build_model, SdeSpec};
use crate::rng::{substream, Stage};
use crate::source::TerminalSource;

pub enum Engine {
    Gaussian(TerminalSource),
    Girsanov(Box<GirsanovSampler>),
    General(Box<GeneralSampler>),
}

impl Engine {
    pub fn new(spec: &SdeSpec, cfg: &RunConfig) -> Result<Self> {
        match cfg.sampler {
            SamplerKind::ConstantDiffusion => match TerminalSource::for_model(spec, cfg.tes_caps)? {
                g @ TerminalSource::Gaussian { .. } => Ok(Engine::Gaussian(g)),
                TerminalSource::Girsanov(mut s) => {
                    s.max_attempts = cfg.caps.attempts;
                    Ok(Engine::Girsanov(s))
                }
                TerminalSource::Transport { .. } => Err(SdeError::Capability(format!(
                    "model '{}' has no constant-diffusion exact route; use the general sampler",
                    spec.name
                ))),
            },
            SamplerKind::General => {
                let mut g = GeneralSampler::new(spec, cfg.tes_caps, cfg.caps)?;
                if let Some((delta, c_local)) = cfg.schedule {
                    g = g.with_schedules(ScheduleSource::Fixed { delta, c_local });
                }
                Ok(Engine::General(Box::new(g)))
            }
        }
    }

    /// Sample `index`, with the work it spent whether or not it succeeded.
    pub fn sample(&mut self, seed: u64, index: u64, eps_out: f64) -> (Result<Accepted>, u64) {
        match self {
            Engine::Gaussian(TerminalSource::Gaussian { x0, scale }) => {
                let mut rng = substream(seed, index, Stage::Path);
                let z = DVector::from_fn(scale.ncols(), |_, _| rng.normal());
                let x = &*x0 + &*scale * z;
                let acc = Accepted {
                    value: x.iter().copied().collect(),
                    eps_out,
                    ..Default::default()
                };
                (Ok(acc), 1)
            }
            Engine::Gaussian(_) => unreachable!("only Gaussian sources are stored"),
            Engine::Girsanov(g) => match g.sample(seed, index, eps_out) {
                Ok(r) => {
                    let work = r.attempts + r.aborted;
                    let acc = Accepted {
                        value: r.value,
                        eps_out: r.eps_out,
                        cell: vec![r.band],
                        attempts: r.attempts,
                        aborted: r.aborted,
                        depth: r.depth,
                        ..Default::default()
                    };
                    (Ok(acc), work)
                }
                Err(e) => {
                    let spent = match &e {
                        SdeError::BudgetExhausted { spent, .. } => *spent,
                        _ => 0,
                    };
                    (Err(e), spent)
                }
            },
            Engine::General(g) => {
                let (r, work) = g.sample_traced(seed, index, eps_out);
                let r = r.map(|r| Accepted {
                    eps_out: r.eps_out,
                    n_prime: Some(r.n_prime),
                    attempts: r.level.attempts + r.position.attempts,
                    depth: r.cube_refinements,
                    factory_pulls: r.factory_pulls(),
                    lambda_pulls: r.lambda_pulls(),
                    cell: r.cube,
                    value: r.value,
                    aborted: 0,
                });
                (r, work)
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Accepted {
    pub value: Vec<f64>,
    pub eps_out: f64,
    /// Likelihood band or unit cube.
    pub cell: Vec<i64>,
    pub n_prime: Option<u64>,
    pub attempts: u64,
    pub aborted: u64,
    /// Deepest refinement used.
    pub depth: u32,
    pub factory_pulls: u64,
    pub lambda_pulls: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Failure {
    pub stage: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Row {
    pub index: u64,
    #[serde(flatten)]
    pub accepted: Option<Accepted>,
    pub failure: Option<Failure>,
    pub work: u64,
    #[serde(skip)]
    pub wall_us: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub model: String,
    pub sampler: SamplerKind,
    pub seed: u64,
    pub requested: u64,
    pub accepted: u64,
    pub failed: u64,
    pub failure_rate: f64,
    pub budget_dominated: bool,
    pub failures_by_stage: BTreeMap<String, u64>,
    pub mean: Vec<f64>,
    pub stderr: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Run {
    pub dim: usize,
    pub rows: Vec<Row>,
    pub summary: Summary,
}

impl Run {
    pub fn values(&self, coord: usize) -> Vec<f64> {
        self.rows
            .iter()
            .filter_map(|r| r.accepted.as_ref().map(|a| a.value[coord]))
            .collect()
    }
}

/// Run `cfg.n` samples. Errors other than budget exhaustion abort the run.
pub fn run_samples(cfg: &RunConfig) -> Result<Run> {
    let spec = build_model(&cfg.model, &cfg.params)?;
    let mut engine = Engine::new(&spec, cfg)?;
    let mut rows = Vec::with_capacity(cfg.n as usize);
    for index in 0..cfg.n {
        let t = Instant::now();
        let (r, work) = engine.sample(cfg.seed, index, cfg.eps_out);
        let wall_us = t.elapsed().as_micros() as u64;
        let (accepted, failure) = match r {
            Ok(a) => (Some(a), None),
            Err(SdeError::BudgetExhausted { stage, .. }) => (
                None,
                Some(Failure {
                    stage: stage.as_str().to_string(),
                    message: "budget exhausted".into(),
                }),
            ),
            Err(e) => return Err(e),
        };
        rows.push(Row {
            index,
            accepted,
            failure,
            work,
            wall_us,
        });
    }
    let summary = summarize(cfg, spec.dim_state, &rows);
    Ok(Run {
        dim: spec.dim_state,
        rows,
        summary,
    })
}

fn summarize(cfg: &RunConfig, dim: usize, rows: &[Row]) -> Summary {
    let accepted: Vec<&Accepted> = rows.iter().filter_map(|r| r.accepted.as_ref()).collect();
    let mut by_stage = BTreeMap::new();
    for f in rows.iter().filter_map(|r| r.failure.as_ref()) {
        *by_stage.entry(f.stage.clone()).or_insert(0) += 1;
    }
    let (mut mean, mut stderr) = (vec![f64::NAN; dim], vec![f64::NAN; dim]);
    if accepted.len() >= 2 {
        for i in 0..dim {
            let xs: Vec<f64> = accepted.iter().map(|a| a.value[i]).collect();
            (mean[i], stderr[i]) = crate::stats::mean_stderr(&xs);
        }
    }
    let failed = (rows.len() - accepted.len()) as u64;
    let rate = failed as f64 / rows.len().max(1) as f64;
    Summary {
        model: cfg.model.clone(),
        sampler: cfg.sampler,
        seed: cfg.seed,
        requested: rows.len() as u64,
        accepted: accepted.len() as u64,
        failed,
        failure_rate: rate,
        budget_dominated: rate > cfg.failure_threshold,
        failures_by_stage: by_stage,
        mean,
        stderr,
    }
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

/// The sample table as CSV. Wall-clock times are kept out so reruns are
/// byte-identical.
pub fn samples_csv(run: &Run, w: impl Write) -> Result<()> {
    let io = |e: csv::Error| SdeError::Config(format!("cannot write samples: {e}"));
    let mut out = csv::Writer::from_writer(w);
    let mut header: Vec<String> = vec!["index".into(), "status".into()];
    header.extend((1..=run.dim).map(|i| format!("x_{i}")));
    header.extend(
        ["eps_out", "stage", "cell", "n_prime", "attempts", "aborted", "depth", "factory_pulls", "lambda_pulls", "work"]
            .map(String::from),
    );
    out.write_record(&header).map_err(io)?;
    for r in &run.rows {
        let mut rec = vec![r.index.to_string()];
        match (&r.accepted, &r.failure) {
            (Some(a), _) => {
                rec.push("ok".into());
                rec.extend(a.value.iter().map(|v| v.to_string()));
                rec.push(a.eps_out.to_string());
                rec.push(String::new());
                rec.push(a.cell.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(" "));
                rec.push(opt(a.n_prime));
                for v in [a.attempts, a.aborted, a.depth as u64, a.factory_pulls, a.lambda_pulls] {
                    rec.push(v.to_string());
                }
            }
            (None, f) => {
                rec.push("failed".into());
                rec.extend((0..run.dim + 1).map(|_| String::new()));
                rec.push(f.as_ref().map(|f| f.stage.clone()).unwrap_or_default());
                rec.extend((0..7).map(|_| String::new()));
            }
        }
        rec.push(r.work.to_string());
        out.write_record(&rec).map_err(io)?;
    }
    out.flush().map_err(|e| SdeError::Config(format!("cannot write samples: {e}")))?;
    Ok(())
}

#[derive(Serialize)]
struct JsonDoc<'a> {
    summary: &'a Summary,
    rows: &'a [Row],
}

pub fn samples_json(run: &Run) -> Result<String> {
    serde_json::to_string_pretty(&JsonDoc {
        summary: &run.summary,
        rows: &run.rows,
    })
    .map_err(|e| SdeError::Config(format!("cannot serialize samples: {e}")))
}

pub fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| SdeError::Config(format!("cannot write {}: {e}", path.display())))
}

/// Write the sample file, its summary and a timing sidecar. Without an
/// output path the samples go to stdout.
pub fn write_run(cfg: &RunConfig, run: &Run) -> Result<()> {
    let body = match cfg.format {
        Format::Csv => {
            let mut buf = Vec::new();
            samples_csv(run, &mut buf)?;
            buf
        }
        Format::Json => samples_json(run)?.into_bytes(),
    };
    let summary = serde_json::to_string_pretty(&run.summary).expect("summary serializes");
    match &cfg.out {
        Some(path) => {
            write_file(path, &body)?;
            if cfg.format == Format::Csv {
                write_file(&sidecar(path, ".summary.json"), summary.as_bytes())?;
            }
            let mut timing = String::from("index,wall_us\n");
            for r in &run.rows {
                timing.push_str(&format!("{},{}\n", r.index, r.wall_us));
            }
            write_file(&sidecar(path, ".timing.csv"), timing.as_bytes())?;
        }
        None => {
            match std::io::stdout().write_all(&body) {
                Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => {
                    return Err(SdeError::Config(format!("cannot write to stdout: {e}")))
                }
                _ => {}
            }
            if cfg.format == Format::Csv {
                eprintln!("{summary}");
            }
        }
    }
    Ok(())
}
