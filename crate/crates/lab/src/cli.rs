//! Command-line front end.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use crate::config::{read_config_file, ExperimentConfig};
use crate::error::LabResult;
use crate::experiments::*;
use crate::output::write_manifest;

#[derive(Debug, Parser)]
#[command(name = "tfbm-lab", version, about = "Monte Carlo experiments for tempered fractional Brownian rough paths")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample paths on a dyadic grid (CSV plus JSON metadata per replica).
    Sample(Shared),
    /// Sample paths and write their level-3 signature tables.
    Lift(Shared),
    /// Solve a built-in rough differential equation on one sample.
    Solve(Shared),
    /// Decay rates of successive lift differences.
    Decay(Shared),
    /// Distance proxy between successive lifts.
    Cauchy(Shared),
    /// Empirical against exact covariance.
    Covariance(Shared),
    /// Solution distances between successive drivers.
    Refine(Shared),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Sample(_) => "sample",
            Command::Lift(_) => "lift",
            Command::Solve(_) => "solve",
            Command::Decay(_) => "decay",
            Command::Cauchy(_) => "cauchy",
            Command::Covariance(_) => "covariance",
            Command::Refine(_) => "refine",
        }
    }

    fn shared(&self) -> &Shared {
        match self {
            Command::Sample(s) | Command::Lift(s) | Command::Solve(s) | Command::Decay(s) | Command::Cauchy(s) | Command::Covariance(s) | Command::Refine(s) => s,
        }
    }
}

#[derive(Debug, Clone, Default, Args)]
pub struct Shared {
    /// Flat `key = value` file; flags override its entries.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub hurst: Option<String>,
    #[arg(long)]
    pub lambda: Option<String>,
    #[arg(long)]
    pub dim: Option<String>,
    /// Finest dyadic level.
    #[arg(long)]
    pub level: Option<String>,
    #[arg(long)]
    pub seed: Option<String>,
    #[arg(long)]
    pub replicas: Option<String>,
    #[arg(long)]
    pub p: Option<String>,
    #[arg(long)]
    pub out: Option<String>,
    #[arg(long = "m-min")]
    pub m_min: Option<String>,
    #[arg(long = "m-max")]
    pub m_max: Option<String>,
    /// Fixed table level of the decay experiment.
    #[arg(long)]
    pub n: Option<String>,
    /// Weight exponent of the distance proxy.
    #[arg(long)]
    pub weight: Option<String>,
    #[arg(long = "n-max")]
    pub n_max: Option<String>,
    #[arg(long)]
    pub theta: Option<String>,
    #[arg(long)]
    pub beta: Option<String>,
    /// Signature table depth for `lift`.
    #[arg(long)]
    pub depth: Option<String>,
    /// constant, linear or sine.
    #[arg(long)]
    pub field: Option<String>,
    #[arg(long)]
    pub amplitude: Option<String>,
    /// none or relax (f(y) = 1 - y).
    #[arg(long)]
    pub drift: Option<String>,
    /// direct or ds.
    #[arg(long)]
    pub method: Option<String>,
    #[arg(long)]
    pub substeps: Option<String>,
    /// Also write SVG plots.
    #[arg(long)]
    pub svg: bool,
}

impl Shared {
    fn flags(&self) -> BTreeMap<String, String> {
        let pairs = [
            ("hurst", &self.hurst),
            ("lambda", &self.lambda),
            ("dim", &self.dim),
            ("level", &self.level),
            ("seed", &self.seed),
            ("replicas", &self.replicas),
            ("p", &self.p),
            ("out", &self.out),
            ("m-min", &self.m_min),
            ("m-max", &self.m_max),
            ("n", &self.n),
            ("weight", &self.weight),
            ("n-max", &self.n_max),
            ("theta", &self.theta),
            ("beta", &self.beta),
            ("depth", &self.depth),
            ("field", &self.field),
            ("amplitude", &self.amplitude),
            ("drift", &self.drift),
            ("method", &self.method),
            ("substeps", &self.substeps),
        ];
        let mut map: BTreeMap<String, String> = pairs.iter().filter_map(|(k, v)| v.as_ref().map(|v| (k.to_string(), v.clone()))).collect();
        if self.svg {
            map.insert("svg".into(), "true".into());
        }
        map
    }
}

/// Resolves the configuration of a command; single-path commands default to one replica.
pub fn resolve_config(command: &Command) -> LabResult<ExperimentConfig> {
    let shared = command.shared();
    let file = match &shared.config {
        Some(p) => read_config_file(p)?,
        None => BTreeMap::new(),
    };
    let flags = shared.flags();
    let mut cfg = ExperimentConfig::resolve(&file, &flags)?;
    let single = matches!(command, Command::Sample(_) | Command::Lift(_) | Command::Solve(_));
    if single && !file.contains_key("replicas") && !flags.contains_key("replicas") {
        cfg.replicas = 1;
    }
    Ok(cfg)
}

/// Runs one command and returns the files it wrote, manifest last.
pub fn run(command: &Command) -> LabResult<Vec<PathBuf>> {
    let cfg = resolve_config(command)?;
    // reject bad configurations before anything touches the output directory
    match command {
        Command::Sample(_) | Command::Solve(_) => cfg.validate_common()?,
        Command::Lift(_) => cfg.validate_lift()?,
        Command::Decay(_) => cfg.validate_decay()?,
        Command::Cauchy(_) => cfg.validate_cauchy()?,
        Command::Covariance(_) => cfg.validate_covariance()?,
        Command::Refine(_) => cfg.validate_refine()?,
    }
    let start = Instant::now();
    std::fs::create_dir_all(&cfg.out)?;
    let dir = cfg.out.clone();
    let mut outputs = match command {
        Command::Sample(_) => write_samples(&cfg, &dir)?,
        Command::Lift(_) => write_lifts(&cfg, &dir)?,
        Command::Solve(_) => write_solve(&cfg, &dir)?,
        Command::Decay(_) => {
            let report = run_decay(&cfg)?;
            for s in &report.slopes {
                println!("level {} {} slope {:.4} +/- {:.4} (expected {:.4})", s.j, s.norm, s.slope, s.ci_half_width, s.expected);
            }
            println!("level 1 differences exactly zero: {}", report.level_one_exact_zero);
            write_decay(&report, &dir, cfg.svg)?
        }
        Command::Cauchy(_) => {
            let rows = run_cauchy(&cfg)?;
            for r in &rows {
                println!("m = {}: median I = {:.4e}, fraction below 2^(-m beta) = {:.3}", r.m, r.median, r.fraction_below);
            }
            write_cauchy(&rows, &dir, cfg.svg)?
        }
        Command::Covariance(_) => {
            let report = run_covariance(&cfg)?;
            println!("max standardized deviation {:.3} over {} samples per entry", report.max_abs_z, report.samples);
            write_covariance(&report, &dir)?
        }
        Command::Refine(_) => {
            let rows = run_rde_refinement(&cfg)?;
            for r in &rows {
                println!("m = {}: median distance {:.4e}", r.m, r.median_distance);
            }
            write_refine(&rows, &dir, cfg.svg)?
        }
    };
    let manifest = write_manifest(&dir, command.name(), &cfg, start.elapsed(), &outputs)?;
    outputs.push(manifest);
    Ok(outputs)
}
