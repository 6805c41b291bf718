use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use exact_sde::config::RunConfig;
use exact_sde::error::SdeError;
use exact_sde::harness::{run_samples, sidecar, write_run};
use exact_sde::report::{constants_json, survival_csv, tails, validate};

const USAGE: u8 = 1;
const BUDGET: u8 = 2;
const INVALID: u8 = 3;

#[derive(Parser)]
#[command(name = "exact-sde", version, about = "Exact sampling of SDE terminal values")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Draw samples and write them with a JSON summary.
    Sample(Common),
    /// Run the closed-form goodness-of-fit suite.
    Validate(Common),
    /// Print the density-constant ledger for one cube.
    Constants(Common),
    /// Report the survival function of per-sample work.
    Tails(Common),
}

#[derive(Args)]
struct Common {
    /// Flat `key = value` configuration file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    model: Option<String>,
    /// Model parameters, e.g. `theta=1,x1=0.5`.
    #[arg(long)]
    params: Option<String>,
    /// constant-diffusion or general.
    #[arg(long)]
    sampler: Option<String>,
    #[arg(long)]
    n: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long = "caps.refinement")]
    caps_refinement: Option<String>,
    #[arg(long = "caps.grid")]
    caps_grid: Option<String>,
    #[arg(long = "caps.attempts")]
    caps_attempts: Option<String>,
    #[arg(long = "caps.factory")]
    caps_factory: Option<String>,
    #[arg(long = "caps.ladder")]
    caps_ladder: Option<String>,
    #[arg(long = "eps-out")]
    eps_out: Option<String>,
    #[arg(long)]
    out: Option<String>,
    /// csv or json.
    #[arg(long)]
    format: Option<String>,
    /// Failure rate above which a run is budget-dominated.
    #[arg(long = "failure-threshold")]
    failure_threshold: Option<String>,
    /// Fixed `delta,C` for the general sampler.
    #[arg(long)]
    schedule: Option<String>,
    /// Cube index for `constants`, e.g. `0` or `0,-1`.
    #[arg(long)]
    cell: Option<String>,
    #[arg(long)]
    enlarge: Option<String>,
    #[arg(long = "parametrix-eps")]
    parametrix_eps: Option<String>,
}

impl Common {
    fn resolve(&self) -> Result<RunConfig, SdeError> {
        let mut cfg = RunConfig::default();
        if let Some(p) = &self.config {
            cfg.apply_file(p)?;
        }
        let flags = [
            ("model", &self.model),
            ("params", &self.params),
            ("sampler", &self.sampler),
            ("n", &self.n),
            ("seed", &self.seed),
            ("caps.refinement", &self.caps_refinement),
            ("caps.grid", &self.caps_grid),
            ("caps.attempts", &self.caps_attempts),
            ("caps.factory", &self.caps_factory),
            ("caps.ladder", &self.caps_ladder),
            ("eps_out", &self.eps_out),
            ("out", &self.out),
            ("format", &self.format),
            ("failure_threshold", &self.failure_threshold),
            ("schedule", &self.schedule),
            ("cell", &self.cell),
            ("enlarge", &self.enlarge),
            ("parametrix_eps", &self.parametrix_eps),
        ];
        for (key, value) in flags {
            if let Some(v) = value {
                cfg.set(key, v)?;
            }
        }
        Ok(cfg)
    }
}

fn json<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("report serializes")
}

/// Print to stdout; a reader that hung up early is not an error.
fn emit(text: &str) -> Result<(), SdeError> {
    let mut out = std::io::stdout().lock();
    match writeln!(out, "{text}").and_then(|_| out.flush()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(SdeError::Config(format!("cannot write to stdout: {e}"))),
        _ => Ok(()),
    }
}

fn run(cmd: Cmd) -> Result<u8, SdeError> {
    match cmd {
        Cmd::Sample(c) => {
            let cfg = c.resolve()?;
            let run = run_samples(&cfg)?;
            write_run(&cfg, &run)?;
            Ok(if run.summary.budget_dominated { BUDGET } else { 0 })
        }
        Cmd::Validate(c) => {
            let cfg = c.resolve()?;
            let (report, run) = validate(&cfg)?;
            if cfg.out.is_some() {
                write_run(&cfg, &run)?;
            }
            emit(&json(&report))?;
            Ok(if report.summary.budget_dominated {
                BUDGET
            } else if !report.passed {
                INVALID
            } else {
                0
            })
        }
        Cmd::Constants(c) => {
            let cfg = c.resolve()?;
            emit(&json(&constants_json(&cfg)?))?;
            Ok(0)
        }
        Cmd::Tails(c) => {
            let cfg = c.resolve()?;
            let run = run_samples(&cfg)?;
            let report = tails(&run);
            if let Some(path) = &cfg.out {
                write_run(&cfg, &run)?;
                let p = sidecar(path, ".survival.csv");
                std::fs::write(&p, survival_csv(&report))
                    .map_err(|e| SdeError::Config(format!("cannot write {}: {e}", p.display())))?;
            }
            emit(&json(&report))?;
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.cmd) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(USAGE)
        }
    }
}
