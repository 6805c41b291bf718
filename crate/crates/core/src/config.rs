//! Run configuration: a flat `key = value` file, overridable key by key.

use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{Result, SdeError};
use crate::general::GeneralCaps;
use crate::model::Params;
use crate::tes::Caps;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SamplerKind {
    /// Exact Gaussian draws or the Girsanov sampler, whichever applies.
    ConstantDiffusion,
    General,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    pub model: String,
    pub params: Params,
    pub sampler: SamplerKind,
    pub n: u64,
    pub seed: u64,
    pub tes_caps: Caps,
    pub caps: GeneralCaps,
    pub eps_out: f64,
    pub out: Option<PathBuf>,
    pub format: Format,
    /// Failure rate above which a run counts as budget-dominated.
    pub failure_threshold: f64,
    /// Fixed `(δ, C)` for the general sampler instead of the appendix bounds.
    pub schedule: Option<(f64, f64)>,
    /// Cube for `constants`, and how far it is enlarged.
    pub cell: Vec<i64>,
    pub enlarge: f64,
    /// Parametrix parameter ε ∈ (0, 1).
    pub parametrix_eps: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: "ou".into(),
            params: Params::new(),
            sampler: SamplerKind::ConstantDiffusion,
            n: 100,
            seed: 42,
            tes_caps: Caps::default(),
            caps: GeneralCaps::default(),
            eps_out: 1e-6,
            out: None,
            format: Format::Csv,
            failure_threshold: 0.01,
            schedule: None,
            cell: vec![0],
            enlarge: 0.0,
            parametrix_eps: 0.5,
        }
    }
}

fn bad(key: &str, value: &str, why: &str) -> SdeError {
    SdeError::Config(format!("key '{key}': cannot use '{value}': {why}"))
}

fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| bad(key, value, "not a number of the expected type"))
}

fn positive<T: std::str::FromStr + PartialOrd + Default>(key: &str, value: &str) -> Result<T> {
    let v: T = num(key, value)?;
    if v <= T::default() {
        return Err(bad(key, value, "must be positive"));
    }
    Ok(v)
}

/// `a=1,b=2` into a parameter map.
pub fn parse_params(s: &str) -> Result<Params> {
    let mut p = Params::new();
    for item in s.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let (k, v) = item
            .split_once('=')
            .ok_or_else(|| bad("params", item, "expected name=value"))?;
        p.insert(k.trim().to_string(), num(k.trim(), v.trim())?);
    }
    Ok(p)
}

fn int_list(key: &str, value: &str) -> Result<Vec<i64>> {
    value.split(',').map(|s| num(key, s.trim())).collect()
}

impl RunConfig {
    /// Apply one setting. Keys under `param.` set model parameters; `-` and
    /// `_` are interchangeable in key names.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        let normalized = key.trim().replace('-', "_");
        let key = normalized.as_str();
        match key {
            "model" => self.model = value.to_string(),
            "params" => self.params.extend(parse_params(value)?),
            "sampler" => {
                self.sampler = match value {
                    "constant-diffusion" => SamplerKind::ConstantDiffusion,
                    "general" => SamplerKind::General,
                    _ => return Err(bad(key, value, "expected constant-diffusion or general")),
                }
            }
            "n" => self.n = positive(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "eps_out" => self.eps_out = positive(key, value)?,
            "out" => self.out = Some(PathBuf::from(value)),
            "format" => {
                self.format = match value {
                    "csv" => Format::Csv,
                    "json" => Format::Json,
                    _ => return Err(bad(key, value, "expected csv or json")),
                }
            }
            "failure_threshold" => {
                let v: f64 = num(key, value)?;
                if !(0.0..=1.0).contains(&v) {
                    return Err(bad(key, value, "must lie in [0, 1]"));
                }
                self.failure_threshold = v;
            }
            "caps.refinement" | "caps.max_level" => self.tes_caps.max_level = positive(key, value)?,
            "caps.grid" | "caps.max_grid_level" => self.tes_caps.max_grid_level = positive(key, value)?,
            "caps.attempts" => self.caps.attempts = positive(key, value)?,
            "caps.factory" | "caps.factory_pulls" => self.caps.factory_pulls = positive(key, value)?,
            "caps.ladder" | "caps.lambda_pulls" => self.caps.lambda_pulls = positive(key, value)?,
            "schedule" => {
                let (d, c) = value
                    .split_once(',')
                    .ok_or_else(|| bad(key, value, "expected delta,C"))?;
                let (d, c): (f64, f64) = (positive(key, d.trim())?, positive(key, c.trim())?);
                self.schedule = Some((d, c));
            }
            "cell" => self.cell = int_list(key, value)?,
            "enlarge" => {
                let v: f64 = num(key, value)?;
                if !(v >= 0.0 && v.is_finite()) {
                    return Err(bad(key, value, "must be finite and nonnegative"));
                }
                self.enlarge = v;
            }
            "parametrix_eps" => {
                let v: f64 = num(key, value)?;
                if !(v > 0.0 && v < 1.0) {
                    return Err(bad(key, value, "must lie in (0, 1)"));
                }
                self.parametrix_eps = v;
            }
            _ => match key.strip_prefix("param.") {
                Some(name) if !name.is_empty() => {
                    self.params.insert(name.to_string(), num(key, value)?);
                }
                _ => return Err(SdeError::Config(format!("unknown key '{key}'"))),
            },
        }
        Ok(())
    }

    /// Read `key = value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| SdeError::Config(format!("line {}: expected key = value, got '{line}'", i + 1)))?;
            self.set(k.trim(), v).map_err(|e| match e {
                SdeError::Config(m) => SdeError::Config(format!("line {}: {m}", i + 1)),
                other => other,
            })?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| SdeError::Config(format!("cannot read config {}: {e}", path.display())))?;
        self.apply_text(&text)
    }
}
