//! Experiment configuration: defaults, flat `key = value` files and flag overrides.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Serialize;

use crate::error::{LabError, LabResult};

/// Fewest replicas accepted by the rate experiments.
pub const MIN_RATE_REPLICAS: usize = 100;
/// Replicate batches behind every standard error.
pub const BATCHES: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum FieldKind {
    Constant,
    Linear,
    Sine,
}

impl FromStr for FieldKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "constant" => Ok(Self::Constant),
            "linear" => Ok(Self::Linear),
            "sine" => Ok(Self::Sine),
            _ => Err(format!("unknown field `{s}` (constant, linear, sine)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum DriftKind {
    None,
    /// f(y) = 1 − y.
    Relax,
}

impl FromStr for DriftKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "none" => Ok(Self::None),
            "relax" => Ok(Self::Relax),
            _ => Err(format!("unknown drift `{s}` (none, relax)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum MethodKind {
    Direct,
    Ds,
}

impl FromStr for MethodKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "direct" => Ok(Self::Direct),
            "ds" | "doss-sussmann" => Ok(Self::Ds),
            _ => Err(format!("unknown method `{s}` (direct, ds)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub hurst: f64,
    pub lambda: f64,
    pub dim: usize,
    /// Finest sampling level M.
    pub level: u32,
    pub m_min: u32,
    pub m_max: u32,
    /// Fixed table level for the decay experiment.
    pub n: u32,
    pub p: f64,
    /// Weight exponent of the ρ_j sums.
    pub weight: f64,
    pub n_max: u32,
    pub replicas: usize,
    pub seed: u64,
    pub out: PathBuf,
    pub theta: f64,
    pub beta: f64,
    /// Table depth for `lift`.
    pub depth: u32,
    pub field: FieldKind,
    pub amplitude: f64,
    pub drift: DriftKind,
    pub method: MethodKind,
    pub substeps: u32,
    pub svg: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            hurst: 0.3,
            lambda: 1.0,
            dim: 2,
            level: 10,
            m_min: 4,
            m_max: 9,
            n: 3,
            p: 3.5,
            weight: 3.0,
            n_max: 8,
            replicas: 2000,
            seed: 1,
            out: PathBuf::from("lab-out"),
            theta: 0.02,
            beta: 0.01,
            depth: 8,
            field: FieldKind::Sine,
            amplitude: 0.5,
            drift: DriftKind::None,
            method: MethodKind::Direct,
            substeps: 2,
            svg: false,
        }
    }
}

/// Keys accepted in configuration files and as `--key` flags.
pub const KEYS: &[&str] = &[
    "hurst", "lambda", "dim", "level", "m-min", "m-max", "n", "p", "weight", "n-max", "replicas", "seed", "out", "theta", "beta",
    "depth", "field", "amplitude", "drift", "method", "substeps", "svg",
];

fn normalize(key: &str) -> String {
    key.trim().replace('_', "-")
}

/// Parses `key = value` lines; `#` starts a comment.
pub fn parse_config_text(text: &str) -> LabResult<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (no, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap().trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| LabError::Config(format!("line {}: expected key = value, got `{line}`", no + 1)))?;
        let key = normalize(k);
        if !KEYS.contains(&key.as_str()) {
            return Err(LabError::Config(format!("line {}: unknown key `{}`", no + 1, k.trim())));
        }
        out.insert(key, v.trim().to_string());
    }
    Ok(out)
}

pub fn read_config_file(path: &Path) -> LabResult<BTreeMap<String, String>> {
    let text = std::fs::read_to_string(path).map_err(|e| LabError::Config(format!("cannot read {}: {e}", path.display())))?;
    parse_config_text(&text)
}

fn parse<T: FromStr>(key: &str, value: &str) -> LabResult<T>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e| LabError::Config(format!("bad value `{value}` for {key}: {e}")))
}

impl ExperimentConfig {
    /// Defaults, then `file`, then `flags`; later sources win.
    pub fn resolve(file: &BTreeMap<String, String>, flags: &BTreeMap<String, String>) -> LabResult<Self> {
        let mut cfg = Self::default();
        for source in [file, flags] {
            for (k, v) in source {
                cfg.set(k, v)?;
            }
        }
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> LabResult<()> {
        let key = normalize(key);
        match key.as_str() {
            "hurst" => self.hurst = parse(&key, value)?,
            "lambda" => self.lambda = parse(&key, value)?,
            "dim" => self.dim = parse(&key, value)?,
            "level" => self.level = parse(&key, value)?,
            "m-min" => self.m_min = parse(&key, value)?,
            "m-max" => self.m_max = parse(&key, value)?,
            "n" => self.n = parse(&key, value)?,
            "p" => self.p = parse(&key, value)?,
            "weight" => self.weight = parse(&key, value)?,
            "n-max" => self.n_max = parse(&key, value)?,
            "replicas" => self.replicas = parse(&key, value)?,
            "seed" => self.seed = parse(&key, value)?,
            "out" => self.out = PathBuf::from(value),
            "theta" => self.theta = parse(&key, value)?,
            "beta" => self.beta = parse(&key, value)?,
            "depth" => self.depth = parse(&key, value)?,
            "field" => self.field = parse(&key, value)?,
            "amplitude" => self.amplitude = parse(&key, value)?,
            "drift" => self.drift = parse(&key, value)?,
            "method" => self.method = parse(&key, value)?,
            "substeps" => self.substeps = parse(&key, value)?,
            "svg" => self.svg = parse(&key, value)?,
            _ => return Err(LabError::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    /// Checks shared by every command.
    pub fn validate_common(&self) -> LabResult<()> {
        let reject = |m: String| Err(LabError::Config(m));
        if !(self.hurst > 0.0 && self.hurst < 1.0) {
            return reject(format!("hurst must lie in (0, 1), got {}", self.hurst));
        }
        if !(self.lambda > 0.0) {
            return reject(format!("lambda must be positive, got {}", self.lambda));
        }
        if self.dim == 0 {
            return reject("dim must be at least 1".into());
        }
        if self.level == 0 || self.level > tfbm_rough::sampler::DEFAULT_MAX_LEVEL {
            return reject(format!("level must lie in 1..={}, got {}", tfbm_rough::sampler::DEFAULT_MAX_LEVEL, self.level));
        }
        if !(self.p > 1.0) {
            return reject(format!("p must exceed 1, got {}", self.p));
        }
        if self.replicas == 0 {
            return reject("replicas must be at least 1".into());
        }
        Ok(())
    }

    fn validate_levels(&self) -> LabResult<()> {
        if self.m_min > self.m_max {
            return Err(LabError::Config(format!("m-min {} exceeds m-max {}", self.m_min, self.m_max)));
        }
        if self.m_max >= self.level {
            return Err(LabError::Config(format!("m-max {} must stay below the finest level {}", self.m_max, self.level)));
        }
        Ok(())
    }

    fn validate_rate_replicas(&self) -> LabResult<()> {
        if self.replicas < MIN_RATE_REPLICAS {
            return Err(LabError::Config(format!(
                "{} replicas are too few for a rate fit; at least {MIN_RATE_REPLICAS} are required ({BATCHES} batches of {})",
                self.replicas,
                MIN_RATE_REPLICAS / BATCHES
            )));
        }
        Ok(())
    }

    pub fn validate_decay(&self) -> LabResult<()> {
        self.validate_common()?;
        self.validate_levels()?;
        self.validate_rate_replicas()?;
        if !(self.hurst > 0.25 && self.hurst < 0.5) {
            return Err(LabError::Config(format!("decay experiments need 1/4 < hurst < 1/2, got {}", self.hurst)));
        }
        if self.dim < 2 {
            return Err(LabError::Config("decay experiments need dim >= 2: level-2 and level-3 differences vanish for one component".into()));
        }
        if self.n == 0 || self.n >= self.m_min {
            return Err(LabError::Config(format!("need 1 <= n < m-min, got n = {}, m-min = {}", self.n, self.m_min)));
        }
        Ok(())
    }

    /// Upper end of the admissible β range, (Hp − θ − 1)/(2p).
    pub fn beta_limit(&self) -> f64 {
        (self.hurst * self.p - self.theta - 1.0) / (2.0 * self.p)
    }

    pub fn validate_cauchy(&self) -> LabResult<()> {
        self.validate_common()?;
        self.validate_levels()?;
        self.validate_rate_replicas()?;
        if !(self.theta > 0.0) {
            return Err(LabError::Config(format!("theta must be positive, got {}", self.theta)));
        }
        if self.hurst * self.p <= 1.0 + self.theta {
            return Err(LabError::Config(format!(
                "the summability condition fails: hurst * p = {} must exceed 1 + theta = {} (for p = {} this needs hurst > {:.4})",
                self.hurst * self.p,
                1.0 + self.theta,
                self.p,
                (1.0 + self.theta) / self.p
            )));
        }
        if !(self.beta > 0.0 && self.beta < self.beta_limit()) {
            return Err(LabError::Config(format!("beta must lie in (0, {}), got {}", self.beta_limit(), self.beta)));
        }
        if self.n_max == 0 || self.n_max > tfbm_rough::signature::DEFAULT_TABLE_DEPTH_CAP {
            return Err(LabError::Config(format!("n-max must lie in 1..=12, got {}", self.n_max)));
        }
        Ok(())
    }

    pub fn validate_covariance(&self) -> LabResult<()> {
        self.validate_common()?;
        if self.level > 6 {
            return Err(LabError::Config(format!("the covariance experiment uses grids up to level 6, got {}", self.level)));
        }
        if self.replicas < 2 {
            return Err(LabError::Config("the covariance experiment needs at least 2 replicas".into()));
        }
        Ok(())
    }

    pub fn validate_refine(&self) -> LabResult<()> {
        self.validate_common()?;
        self.validate_levels()?;
        Ok(())
    }

    pub fn validate_lift(&self) -> LabResult<()> {
        self.validate_common()?;
        if self.depth > tfbm_rough::signature::DEFAULT_TABLE_DEPTH_CAP {
            return Err(LabError::Config(format!("depth must be at most 12, got {}", self.depth)));
        }
        Ok(())
    }
}
