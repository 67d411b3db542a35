//! The Monte Carlo experiments and the single-path commands behind the CLI.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use tfbm_rough::bessel::tfbm_covariance;
use tfbm_rough::controlled::{ConstantField, ScalarPolynomial, SineField, SmoothField};
use tfbm_rough::norms::dp_proxy;
use tfbm_rough::rde::{
    apriori_report, driver_from_sample, solve_rde_with_drift, Drift, LinearDrift, Method, RdeProblem, RdeSolution, StepOptions, ZeroDrift,
};
use tfbm_rough::sampler::{CovarianceFactor, DyadicGrid, GaussianPathSample};
use tfbm_rough::signature::SignatureTable;

use crate::config::{DriftKind, ExperimentConfig, FieldKind, MethodKind, BATCHES};
use crate::error::LabResult;
use crate::output::{line_plot, write_csv, Series};
use crate::stats::{batch_means, batch_se, mean, median, ols, sample_sd, T_975_19};

fn factor(cfg: &ExperimentConfig, level: u32) -> LabResult<CovarianceFactor> {
    Ok(CovarianceFactor::new(DyadicGrid::unit(level), cfg.hurst, cfg.lambda)?)
}

fn fmt(v: f64) -> String {
    format!("{v}")
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecayRow {
    pub j: usize,
    pub m: u32,
    pub n: u32,
    /// (E mean_k |ΔB^j_{n,k}|²)^{1/2}.
    pub moment_l2: f64,
    pub se_l2: f64,
    /// (E mean_k |ΔB^j_{n,k}|^{p/j})^{j/p}.
    pub moment_lq: f64,
    pub se_lq: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecaySlope {
    pub j: usize,
    pub norm: &'static str,
    pub slope: f64,
    pub ci_half_width: f64,
    pub expected: f64,
}

#[derive(Debug, Clone)]
pub struct DecayReport {
    pub rows: Vec<DecayRow>,
    pub slopes: Vec<DecaySlope>,
    /// Every level-1 difference was exactly zero.
    pub level_one_exact_zero: bool,
}

impl DecayReport {
    pub fn slope(&self, j: usize, norm: &str) -> Option<&DecaySlope> {
        self.slopes.iter().find(|s| s.j == j && s.norm == norm)
    }
}

/// Expected log₂ slope in m of the level-j refinement difference.
pub fn expected_decay_slope(hurst: f64, j: usize) -> f64 {
    -(2.0 * j as f64 * hurst - 1.0) / 2.0
}

// per m: per level j, (mean_k |Δ|², mean_k |Δ|^{p/j}); plus whether level one vanished
fn decay_replica(sample: &GaussianPathSample, cfg: &ExperimentConfig) -> LabResult<(Vec<[[f64; 2]; 3]>, bool)> {
    let mut out = Vec::new();
    let mut zero = true;
    for m in cfg.m_min..=cfg.m_max {
        let coarse = SignatureTable::from_sample(sample, m, cfg.n)?;
        let fine = SignatureTable::from_sample(sample, m + 1, cfg.n)?;
        let mut acc = [[0.0; 2]; 3];
        let cells = coarse.level_entries(cfg.n).len() as f64;
        for (a, b) in coarse.level_entries(cfg.n).iter().zip(fine.level_entries(cfg.n)) {
            for (j, slot) in acc.iter_mut().enumerate() {
                let sq: f64 = a.level(j + 1).iter().zip(b.level(j + 1)).map(|(u, v)| (v - u) * (v - u)).sum();
                if j == 0 && sq != 0.0 {
                    zero = false;
                }
                slot[0] += sq / cells;
                slot[1] += sq.sqrt().powf(cfg.p / (j + 1) as f64) / cells;
            }
        }
        out.push(acc);
    }
    Ok((out, zero))
}

fn moment_and_se(values: &[f64], exponent: f64) -> (f64, f64) {
    let m = mean(values);
    let moment = m.powf(1.0 / exponent);
    let se = if m > 0.0 { moment / exponent * batch_se(values, BATCHES) / m } else { 0.0 };
    (moment, se)
}

pub fn run_decay(cfg: &ExperimentConfig) -> LabResult<DecayReport> {
    cfg.validate_decay()?;
    let factor = factor(cfg, cfg.level)?;
    let per_replica: Vec<(Vec<[[f64; 2]; 3]>, bool)> = (0..cfg.replicas as u64)
        .into_par_iter()
        .map(|r| decay_replica(&factor.sample(cfg.dim, cfg.seed, r)?, cfg))
        .collect::<LabResult<_>>()?;
    let level_one_exact_zero = per_replica.iter().all(|(_, z)| *z);
    let ms: Vec<u32> = (cfg.m_min..=cfg.m_max).collect();
    let mut rows = Vec::new();
    let mut slopes = Vec::new();
    for j in 0..3 {
        for (norm, which, exponent) in [("L2", 0usize, 2.0), ("Lq", 1usize, cfg.p / (j + 1) as f64)] {
            let mut logs = Vec::new();
            let mut batch_logs = vec![Vec::new(); BATCHES];
            for (mi, &m) in ms.iter().enumerate() {
                let values: Vec<f64> = per_replica.iter().map(|(v, _)| v[mi][j][which]).collect();
                let (moment, se) = moment_and_se(&values, exponent);
                if which == 0 {
                    rows.push(DecayRow { j: j + 1, m, n: cfg.n, moment_l2: moment, se_l2: se, moment_lq: 0.0, se_lq: 0.0 });
                } else {
                    let row = rows.iter_mut().find(|r| r.j == j + 1 && r.m == m).unwrap();
                    row.moment_lq = moment;
                    row.se_lq = se;
                }
                logs.push(moment.log2());
                for (b, bm) in batch_means(&values, BATCHES).into_iter().enumerate() {
                    batch_logs[b].push(bm.powf(1.0 / exponent).log2());
                }
            }
            if j == 0 {
                continue;
            }
            let x: Vec<f64> = ms.iter().map(|&m| m as f64).collect();
            let slope = ols(&x, &logs).0;
            let batch_slopes: Vec<f64> = batch_logs.iter().map(|y| ols(&x, y).0).collect();
            let ci = T_975_19 * sample_sd(&batch_slopes) / (BATCHES as f64).sqrt();
            slopes.push(DecaySlope { j: j + 1, norm, slope, ci_half_width: ci, expected: expected_decay_slope(cfg.hurst, j + 1) });
        }
    }
    Ok(DecayReport { rows, slopes, level_one_exact_zero })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CauchyRow {
    pub m: u32,
    pub median: f64,
    pub mean: f64,
    pub se: f64,
    /// 2^{−mβ}.
    pub threshold: f64,
    pub fraction_below: f64,
}

/// I(B^m, B^{m+1}) for one sample.
pub fn cauchy_value(sample: &GaussianPathSample, m: u32, cfg: &ExperimentConfig) -> LabResult<f64> {
    let coarse = SignatureTable::from_sample(sample, m, cfg.n_max)?;
    let fine = SignatureTable::from_sample(sample, m + 1, cfg.n_max)?;
    Ok(dp_proxy(&coarse, &fine, cfg.p, cfg.weight, cfg.n_max)?)
}

pub fn run_cauchy(cfg: &ExperimentConfig) -> LabResult<Vec<CauchyRow>> {
    cfg.validate_cauchy()?;
    let factor = factor(cfg, cfg.level)?;
    let values: Vec<Vec<f64>> = (0..cfg.replicas as u64)
        .into_par_iter()
        .map(|r| {
            let s = factor.sample(cfg.dim, cfg.seed, r)?;
            (cfg.m_min..=cfg.m_max).map(|m| cauchy_value(&s, m, cfg)).collect::<LabResult<Vec<f64>>>()
        })
        .collect::<LabResult<_>>()?;
    Ok((cfg.m_min..=cfg.m_max)
        .enumerate()
        .map(|(mi, m)| {
            let v: Vec<f64> = values.iter().map(|r| r[mi]).collect();
            let threshold = 2f64.powf(-(m as f64) * cfg.beta);
            CauchyRow {
                m,
                median: median(&v),
                mean: mean(&v),
                se: batch_se(&v, BATCHES),
                threshold,
                fraction_below: v.iter().filter(|&&x| x <= threshold).count() as f64 / v.len() as f64,
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceEntry {
    pub i: usize,
    pub j: usize,
    pub t_i: f64,
    pub t_j: f64,
    pub theory: f64,
    pub empirical: f64,
    pub se: f64,
    /// (empirical − theory)/se, zero when both the deviation and se vanish.
    pub z: f64,
}

#[derive(Debug, Clone)]
pub struct CovarianceReport {
    pub entries: Vec<CovarianceEntry>,
    pub max_abs_z: f64,
    /// Samples behind each entry: replicas times components.
    pub samples: usize,
}

impl CovarianceReport {
    pub fn entry(&self, i: usize, j: usize) -> Option<&CovarianceEntry> {
        self.entries.iter().find(|e| e.i == i && e.j == j)
    }
}

const COVARIANCE_CHUNK: usize = 100;

/// Empirical covariance on the level grid (including t = 0) pooled over components,
/// standardized by the per-sample standard error.
pub fn run_covariance(cfg: &ExperimentConfig) -> LabResult<CovarianceReport> {
    cfg.validate_covariance()?;
    let grid = DyadicGrid::unit(cfg.level);
    let factor = factor(cfg, cfg.level)?;
    let n = grid.len();
    let chunks = cfg.replicas.div_ceil(COVARIANCE_CHUNK);
    let partial: Vec<(Vec<f64>, Vec<f64>)> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut sum = vec![0.0; n * n];
            let mut sq = vec![0.0; n * n];
            for r in c * COVARIANCE_CHUNK..((c + 1) * COVARIANCE_CHUNK).min(cfg.replicas) {
                let s = factor.sample(cfg.dim, cfg.seed, r as u64)?;
                for comp in 0..cfg.dim {
                    for i in 0..n {
                        let a = s.row(i)[comp];
                        for j in i..n {
                            let v = a * s.row(j)[comp];
                            sum[i * n + j] += v;
                            sq[i * n + j] += v * v;
                        }
                    }
                }
            }
            Ok((sum, sq))
        })
        .collect::<LabResult<_>>()?;
    let mut sum = vec![0.0; n * n];
    let mut sq = vec![0.0; n * n];
    for (s, q) in &partial {
        for k in 0..n * n {
            sum[k] += s[k];
            sq[k] += q[k];
        }
    }
    let count = (cfg.replicas * cfg.dim) as f64;
    let mut entries = Vec::new();
    let mut max_abs_z = 0.0f64;
    for i in 0..n {
        for j in i..n {
            let (ti, tj) = (grid.time(i), grid.time(j));
            let theory = tfbm_covariance(cfg.hurst, cfg.lambda, ti, tj)?;
            let empirical = sum[i * n + j] / count;
            let var = ((sq[i * n + j] - count * empirical * empirical) / (count - 1.0)).max(0.0);
            let se = (var / count).sqrt();
            let dev = empirical - theory;
            let z = if se > 0.0 { dev / se } else if dev == 0.0 { 0.0 } else { f64::INFINITY };
            max_abs_z = max_abs_z.max(z.abs());
            entries.push(CovarianceEntry { i, j, t_i: ti, t_j: tj, theory, empirical, se, z });
        }
    }
    Ok(CovarianceReport { entries, max_abs_z, samples: count as usize })
}

/// A built-in test problem: field, drift and initial value.
pub struct CatalogProblem {
    pub field: Arc<dyn SmoothField>,
    pub drift: Arc<dyn Drift>,
    pub initial: Vec<f64>,
    /// Driver components required.
    pub noise_dim: usize,
}

pub fn catalog_problem(cfg: &ExperimentConfig) -> CatalogProblem {
    let (field, d): (Arc<dyn SmoothField>, usize) = match cfg.field {
        FieldKind::Constant => (Arc::new(ConstantField { d: cfg.dim, m: cfg.dim, sigma: vec![cfg.amplitude; cfg.dim * cfg.dim] }), cfg.dim),
        FieldKind::Linear => (Arc::new(ScalarPolynomial::linear(cfg.amplitude)), 1),
        FieldKind::Sine => (Arc::new(SineField::standard(cfg.dim, cfg.dim, cfg.amplitude)), cfg.dim),
    };
    let drift: Arc<dyn Drift> = match cfg.drift {
        DriftKind::None => Arc::new(ZeroDrift { d }),
        DriftKind::Relax => Arc::new(LinearDrift::relaxation(vec![1.0; d])),
    };
    let initial = if cfg.field == FieldKind::Linear { vec![1.0] } else { vec![0.0; d] };
    CatalogProblem { field, drift, initial, noise_dim: d }
}

fn method(cfg: &ExperimentConfig) -> Method {
    match cfg.method {
        MethodKind::Direct => Method::Direct,
        MethodKind::Ds => Method::DossSussmann,
    }
}

pub fn solve_on_level(cfg: &ExperimentConfig, sample: &GaussianPathSample, level: u32) -> LabResult<(RdeProblem, RdeSolution)> {
    let cat = catalog_problem(cfg);
    let driver = driver_from_sample(sample, level)?;
    let problem = RdeProblem::new(cat.drift, cat.field, driver, cat.initial, 0.0, sample.grid.horizon)?;
    let opts = StepOptions::default().with_substeps(cfg.substeps);
    let sol = solve_rde_with_drift(&problem, method(cfg), &opts)?;
    Ok((problem, sol))
}

// largest relative error against y_a·exp(a·x_{0,t}) at the output knots
fn linear_closed_form_error(cfg: &ExperimentConfig, problem: &RdeProblem, sol: &RdeSolution) -> f64 {
    let path = problem.driver.path();
    let x0 = path.knot(0)[0];
    sol.knots
        .iter()
        .zip(&sol.states)
        .map(|(&k, y)| {
            let exact = problem.initial[0] * (cfg.amplitude * (path.knot(k)[0] - x0)).exp();
            ((y[0] - exact) / exact).abs()
        })
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefineRow {
    pub m: u32,
    pub median_distance: f64,
    pub mean_distance: f64,
    pub se_distance: f64,
    /// Median closed-form error at level m (linear field without drift only).
    pub median_closed_form_error: Option<f64>,
}

pub fn run_rde_refinement(cfg: &ExperimentConfig) -> LabResult<Vec<RefineRow>> {
    cfg.validate_refine()?;
    let factor = factor(cfg, cfg.level)?;
    let noise = catalog_problem(cfg).noise_dim;
    let closed_form = cfg.field == FieldKind::Linear && cfg.drift == DriftKind::None;
    let per: Vec<Vec<(f64, f64)>> = (0..cfg.replicas as u64)
        .into_par_iter()
        .map(|r| {
            let s = factor.sample(noise, cfg.seed, r)?;
            (cfg.m_min..=cfg.m_max)
                .map(|m| {
                    let (pc, coarse) = solve_on_level(cfg, &s, m)?;
                    let (_, fine) = solve_on_level(cfg, &s, m + 1)?;
                    let err = if closed_form { linear_closed_form_error(cfg, &pc, &coarse) } else { f64::NAN };
                    Ok((coarse.sup_distance(&fine)?, err))
                })
                .collect::<LabResult<Vec<_>>>()
        })
        .collect::<LabResult<_>>()?;
    Ok((cfg.m_min..=cfg.m_max)
        .enumerate()
        .map(|(mi, m)| {
            let d: Vec<f64> = per.iter().map(|r| r[mi].0).collect();
            let se = if d.len() >= BATCHES { batch_se(&d, BATCHES) } else if d.len() > 1 { sample_sd(&d) / (d.len() as f64).sqrt() } else { 0.0 };
            RefineRow {
                m,
                median_distance: median(&d),
                mean_distance: mean(&d),
                se_distance: se,
                median_closed_form_error: closed_form.then(|| median(&per.iter().map(|r| r[mi].1).collect::<Vec<_>>())),
            }
        })
        .collect())
}

/// Writes `sample_<r>.csv` and `sample_<r>.json` for every replica.
pub fn write_samples(cfg: &ExperimentConfig, dir: &Path) -> LabResult<Vec<PathBuf>> {
    let factor = factor(cfg, cfg.level)?;
    let mut outputs = Vec::new();
    for r in 0..cfg.replicas as u64 {
        let s = factor.sample(cfg.dim, cfg.seed, r)?;
        let csv = dir.join(format!("sample_{r}.csv"));
        let json = dir.join(format!("sample_{r}.json"));
        s.write_csv(&csv)?;
        s.write_sidecar(&json)?;
        outputs.push(csv);
        outputs.push(json);
    }
    Ok(outputs)
}

/// Writes the signature table of every replica as `lift_<r>.csv`.
pub fn write_lifts(cfg: &ExperimentConfig, dir: &Path) -> LabResult<Vec<PathBuf>> {
    cfg.validate_lift()?;
    let factor = factor(cfg, cfg.level)?;
    let mut outputs = Vec::new();
    for r in 0..cfg.replicas as u64 {
        let s = factor.sample(cfg.dim, cfg.seed, r)?;
        let table = SignatureTable::from_sample(&s, cfg.level, cfg.depth)?;
        let path = dir.join(format!("lift_{r}.csv"));
        table.write_csv(&path)?;
        outputs.push(path);
    }
    Ok(outputs)
}

/// Solves the catalog problem on replica 0 and writes the solution and the bound report.
pub fn write_solve(cfg: &ExperimentConfig, dir: &Path) -> LabResult<Vec<PathBuf>> {
    cfg.validate_common()?;
    let noise = catalog_problem(cfg).noise_dim;
    let sample = factor(cfg, cfg.level)?.sample(noise, cfg.seed, 0)?;
    let (problem, sol) = solve_on_level(cfg, &sample, cfg.level)?;
    let csv = dir.join("solution.csv");
    sol.write_csv(&csv)?;
    let pure = RdeProblem::pure(problem.diffusion.clone(), problem.driver.clone(), problem.initial.clone())?;
    let report = apriori_report(&pure, &Default::default())?;
    let text = dir.join("report.txt");
    let mut body = report.to_text();
    if cfg.drift != DriftKind::None {
        body.push_str("# bounds refer to the equation without drift\n");
    }
    std::fs::write(&text, body)?;
    Ok(vec![csv, text])
}

pub fn write_decay(report: &DecayReport, dir: &Path, svg: bool) -> LabResult<Vec<PathBuf>> {
    let rows: Vec<Vec<String>> = report
        .rows
        .iter()
        .map(|r| vec![r.j.to_string(), r.m.to_string(), r.n.to_string(), fmt(r.moment_l2), fmt(r.se_l2), fmt(r.moment_lq), fmt(r.se_lq)])
        .collect();
    let table = dir.join("decay.csv");
    write_csv(&table, &["j", "m", "n", "moment_l2", "se_l2", "moment_lq", "se_lq"], &rows)?;
    let rows: Vec<Vec<String>> = report
        .slopes
        .iter()
        .map(|s| vec![s.j.to_string(), s.norm.to_string(), fmt(s.slope), fmt(s.ci_half_width), fmt(s.expected)])
        .collect();
    let slopes = dir.join("decay_slopes.csv");
    write_csv(&slopes, &["j", "norm", "slope", "ci_halfwidth", "expected"], &rows)?;
    let mut out = vec![table, slopes];
    if svg {
        let series: Vec<Series> = (2..=3)
            .map(|j| Series {
                name: format!("level {j}, L2"),
                points: report.rows.iter().filter(|r| r.j == j).map(|r| (r.m as f64, r.moment_l2.log2())).collect(),
            })
            .collect();
        let path = dir.join("decay.svg");
        std::fs::write(&path, line_plot("Refinement differences", "m", "log2 moment", &series))?;
        out.push(path);
    }
    Ok(out)
}

pub fn write_cauchy(rows: &[CauchyRow], dir: &Path, svg: bool) -> LabResult<Vec<PathBuf>> {
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| vec![r.m.to_string(), fmt(r.median), fmt(r.mean), fmt(r.se), fmt(r.threshold), fmt(r.fraction_below)])
        .collect();
    let path = dir.join("cauchy.csv");
    write_csv(&path, &["m", "median_i", "mean_i", "se_i", "threshold", "fraction_below"], &body)?;
    let mut out = vec![path];
    if svg {
        let series = vec![
            Series { name: "median I".into(), points: rows.iter().map(|r| (r.m as f64, r.median.log2())).collect() },
            Series { name: "threshold".into(), points: rows.iter().map(|r| (r.m as f64, r.threshold.log2())).collect() },
        ];
        let p = dir.join("cauchy.svg");
        std::fs::write(&p, line_plot("Successive lift distance proxy", "m", "log2 I", &series))?;
        out.push(p);
    }
    Ok(out)
}

pub fn write_covariance(report: &CovarianceReport, dir: &Path) -> LabResult<Vec<PathBuf>> {
    let body: Vec<Vec<String>> = report
        .entries
        .iter()
        .map(|e| vec![e.i.to_string(), e.j.to_string(), fmt(e.t_i), fmt(e.t_j), fmt(e.theory), fmt(e.empirical), fmt(e.se), fmt(e.z)])
        .collect();
    let path = dir.join("covariance.csv");
    write_csv(&path, &["i", "j", "t_i", "t_j", "theory", "empirical", "se", "z"], &body)?;
    Ok(vec![path])
}

pub fn write_refine(rows: &[RefineRow], dir: &Path, svg: bool) -> LabResult<Vec<PathBuf>> {
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.m.to_string(),
                fmt(r.median_distance),
                fmt(r.mean_distance),
                fmt(r.se_distance),
                r.median_closed_form_error.map_or(String::new(), fmt),
            ]
        })
        .collect();
    let path = dir.join("refine.csv");
    write_csv(&path, &["m", "median_distance", "mean_distance", "se_distance", "median_closed_form_error"], &body)?;
    let mut out = vec![path];
    if svg {
        let series = vec![Series { name: "median distance".into(), points: rows.iter().map(|r| (r.m as f64, r.median_distance.log2())).collect() }];
        let p = dir.join("refine.svg");
        std::fs::write(&p, line_plot("Solution distance between successive drivers", "m", "log2 distance", &series))?;
        out.push(p);
    }
    Ok(out)
}
