//! Rough differential equations driven by a lifted path: the third-order one-step
//! scheme, drift by direct stepping or Doss-Sussmann, initial-value Jacobians,
//! backward solves and a priori bounds.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use nalgebra::DMatrix;

use crate::controlled::SmoothField;
use crate::error::{domain, Error, Result};
use crate::norms::{euclid, greedy_times_pvar, rough_pvar_norm, PairNorms, DEFAULT_P};
use crate::sampler::GaussianPathSample;
use crate::signature::{KnotLift, PiecewiseLinearPath, TruncatedSignature};

pub const DEFAULT_DIVERGENCE_CAP: f64 = 1e8;
pub const DEFAULT_BLOCK: usize = 16;
/// Largest condition number of ∂φ/∂y accepted by the Doss-Sussmann solver.
pub const MAX_CONDITION: f64 = 1e12;

/// Drift f: ℝ^d → ℝ^d.
pub trait Drift: Send + Sync {
    fn dim(&self) -> usize;
    fn eval(&self, y: &[f64]) -> Vec<f64>;
    /// ∂f_i/∂y_j stored at [i*d + j].
    fn jacobian(&self, y: &[f64]) -> Vec<f64>;
    fn lipschitz(&self) -> f64;
    fn is_zero(&self) -> bool {
        false
    }
}

#[derive(Debug, Clone)]
pub struct ZeroDrift {
    pub d: usize,
}

impl Drift for ZeroDrift {
    fn dim(&self) -> usize {
        self.d
    }
    fn eval(&self, _: &[f64]) -> Vec<f64> {
        vec![0.0; self.d]
    }
    fn jacobian(&self, _: &[f64]) -> Vec<f64> {
        vec![0.0; self.d * self.d]
    }
    fn lipschitz(&self) -> f64 {
        0.0
    }
    fn is_zero(&self) -> bool {
        true
    }
}

/// f(y) = A y + b.
#[derive(Debug, Clone)]
pub struct LinearDrift {
    pub d: usize,
    pub matrix: Vec<f64>,
    pub offset: Vec<f64>,
}

impl LinearDrift {
    pub fn new(matrix: Vec<f64>, offset: Vec<f64>) -> Result<Self> {
        let d = offset.len();
        if d == 0 || matrix.len() != d * d {
            return domain(format!("linear drift needs a {d}x{d} matrix, got {} entries", matrix.len()));
        }
        Ok(Self { d, matrix, offset })
    }

    /// f(y) = target − y.
    pub fn relaxation(target: Vec<f64>) -> Self {
        let d = target.len();
        let mut matrix = vec![0.0; d * d];
        for i in 0..d {
            matrix[i * d + i] = -1.0;
        }
        Self { d, matrix, offset: target }
    }
}

impl Drift for LinearDrift {
    fn dim(&self) -> usize {
        self.d
    }
    fn eval(&self, y: &[f64]) -> Vec<f64> {
        (0..self.d)
            .map(|i| self.offset[i] + (0..self.d).map(|j| self.matrix[i * self.d + j] * y[j]).sum::<f64>())
            .collect()
    }
    fn jacobian(&self, _: &[f64]) -> Vec<f64> {
        self.matrix.clone()
    }
    fn lipschitz(&self) -> f64 {
        let a = DMatrix::from_row_slice(self.d, self.d, &self.matrix);
        a.singular_values().max()
    }
}

/// dy = f(y) dt + g(y) dB on [start, end], with B the lifted driver.
#[derive(Clone)]
pub struct RdeProblem {
    pub drift: Arc<dyn Drift>,
    pub diffusion: Arc<dyn SmoothField>,
    pub initial: Vec<f64>,
    pub start: f64,
    pub end: f64,
    pub driver: Arc<KnotLift>,
}

impl RdeProblem {
    pub fn new(
        drift: Arc<dyn Drift>,
        diffusion: Arc<dyn SmoothField>,
        driver: Arc<KnotLift>,
        initial: Vec<f64>,
        start: f64,
        end: f64,
    ) -> Result<Self> {
        let d = diffusion.state_dim();
        if drift.dim() != d || initial.len() != d {
            return domain(format!(
                "state dimensions disagree: field {d}, drift {}, initial value {}",
                drift.dim(),
                initial.len()
            ));
        }
        if diffusion.noise_dim() != driver.dim() {
            return domain(format!("field expects {} noise components, driver has {}", diffusion.noise_dim(), driver.dim()));
        }
        if !drift.lipschitz().is_finite() {
            return domain("drift must be globally Lipschitz");
        }
        if !(start < end) {
            return domain(format!("need start < end, got [{start}, {end}]"));
        }
        knot_index(&driver, start)?;
        knot_index(&driver, end)?;
        Ok(Self { drift, diffusion, initial, start, end, driver })
    }

    /// Zero drift over the whole driver domain.
    pub fn pure(diffusion: Arc<dyn SmoothField>, driver: Arc<KnotLift>, initial: Vec<f64>) -> Result<Self> {
        let times = driver.times();
        let (a, b) = (times[0], times[times.len() - 1]);
        let d = diffusion.state_dim();
        Self::new(Arc::new(ZeroDrift { d }), diffusion, driver, initial, a, b)
    }

    pub fn with_initial(&self, initial: Vec<f64>) -> Self {
        Self { initial, ..self.clone() }
    }

    fn knot_range(&self) -> Result<(usize, usize)> {
        Ok((knot_index(&self.driver, self.start)?, knot_index(&self.driver, self.end)?))
    }
}

/// Piecewise-linear lift of a sample restricted to dyadic `level`.
pub fn driver_from_sample(sample: &GaussianPathSample, level: u32) -> Result<Arc<KnotLift>> {
    let coarse = sample.restrict(level)?;
    Ok(Arc::new(KnotLift::new(PiecewiseLinearPath::from_sample(&coarse))))
}

fn knot_index(lift: &KnotLift, t: f64) -> Result<usize> {
    let times = lift.times();
    let tol = 1e-12 * (times[times.len() - 1] - times[0]).abs().max(1.0);
    let i = times.partition_point(|&x| x < t - tol);
    if i < times.len() && (times[i] - t).abs() <= tol {
        Ok(i)
    } else {
        domain(format!("time {t} is not a knot of the driver"))
    }
}

#[derive(Debug, Clone)]
pub struct StepOptions {
    /// Driver knots per step.
    pub stride: usize,
    /// Each step is split into 2^substeps pieces with exact partial signatures.
    pub substeps: u32,
    /// Adds the greedy times of the driver's rough p-variation norm at this radius to the step grid.
    pub greedy_radius: Option<f64>,
    pub p: f64,
    pub cap: f64,
    /// Doss-Sussmann restart length in knots.
    pub block: usize,
    pub track_jacobian: bool,
}

impl Default for StepOptions {
    fn default() -> Self {
        Self {
            stride: 1,
            substeps: 0,
            greedy_radius: None,
            p: DEFAULT_P,
            cap: DEFAULT_DIVERGENCE_CAP,
            block: DEFAULT_BLOCK,
            track_jacobian: false,
        }
    }
}

impl StepOptions {
    pub fn with_substeps(mut self, substeps: u32) -> Self {
        self.substeps = substeps;
        self
    }

    pub fn with_jacobian(mut self) -> Self {
        self.track_jacobian = true;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Direct,
    DossSussmann,
}

/// Solution values at the step points; `jacobians[k]` is the derivative of the state at
/// `times[k]` with respect to the prescribed value when tracked.
#[derive(Debug, Clone)]
pub struct RdeSolution {
    pub dim: usize,
    pub knots: Vec<usize>,
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub jacobians: Vec<DMatrix<f64>>,
}

impl RdeSolution {
    pub fn final_state(&self) -> &[f64] {
        self.states.last().unwrap()
    }

    pub fn sup_norm(&self) -> f64 {
        self.states.iter().map(|y| euclid(y)).fold(0.0, f64::max)
    }

    /// Largest distance over the times shared by both solutions.
    pub fn sup_distance(&self, other: &RdeSolution) -> Result<f64> {
        let mut best = 0.0f64;
        let mut shared = 0;
        let mut j = 0;
        for (i, &t) in self.times.iter().enumerate() {
            while j < other.times.len() && other.times[j] < t - 1e-12 {
                j += 1;
            }
            if j < other.times.len() && (other.times[j] - t).abs() <= 1e-12 {
                let diff: Vec<f64> = self.states[i].iter().zip(&other.states[j]).map(|(a, b)| a - b).collect();
                best = best.max(euclid(&diff));
                shared += 1;
            }
        }
        if shared == 0 {
            return domain("solutions share no output times");
        }
        Ok(best)
    }

    /// CSV with header `t,y_0..y_{d-1}`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        let header: Vec<String> = std::iter::once("t".to_string()).chain((0..self.dim).map(|c| format!("y_{c}"))).collect();
        writeln!(w, "{}", header.join(","))?;
        for (t, y) in self.times.iter().zip(&self.states) {
            write!(w, "{t}")?;
            for v in y {
                write!(w, ",{v}")?;
            }
            writeln!(w)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// One third-order step y ↦ y + g x + (Dg g) X² + (D²g g g + Dg Dg g) X³, with the
/// exact derivative of the map when requested (row-major d×d).
pub fn scheme_step(field: &dyn SmoothField, y: &[f64], sig: &TruncatedSignature, with_jacobian: bool) -> (Vec<f64>, Option<Vec<f64>>) {
    let d = field.state_dim();
    let m = field.noise_dim();
    let g = field.eval(y);
    let g1 = field.d1(y);
    let g2 = field.d2(y);
    let gv = |i: usize, j: usize| g[i * m + j];
    let g1v = |i: usize, j: usize, a: usize| g1[(i * m + j) * d + a];
    let g2v = |i: usize, j: usize, a: usize, b: usize| g2[((i * m + j) * d + a) * d + b];
    let (x1, x2, x3) = (&sig.level1, &sig.level2, &sig.level3);

    // area[(a*m + j)*m + k] = Σ_b ∂_b g_ak g_bj
    let mut area = vec![0.0; d * m * m];
    for a in 0..d {
        for j in 0..m {
            for k in 0..m {
                area[(a * m + j) * m + k] = (0..d).map(|b| g1v(a, k, b) * gv(b, j)).sum();
            }
        }
    }
    // t1[a*m + l] = Σ_jk area_ajk X³_jkl, t2[(a*d + b)*m + l] = Σ_jk g_aj g_bk X³_jkl
    let mut t1 = vec![0.0; d * m];
    let mut t2 = vec![0.0; d * d * m];
    for l in 0..m {
        for j in 0..m {
            for k in 0..m {
                let w = x3[(j * m + k) * m + l];
                for a in 0..d {
                    t1[a * m + l] += area[(a * m + j) * m + k] * w;
                    for b in 0..d {
                        t2[(a * d + b) * m + l] += gv(a, j) * gv(b, k) * w;
                    }
                }
            }
        }
    }

    let mut out = y.to_vec();
    for i in 0..d {
        let mut inc = 0.0;
        for j in 0..m {
            inc += gv(i, j) * x1[j];
        }
        for j in 0..m {
            for k in 0..m {
                inc += area[(i * m + j) * m + k] * x2[j * m + k];
            }
        }
        for l in 0..m {
            for a in 0..d {
                inc += g1v(i, l, a) * t1[a * m + l];
                for b in 0..d {
                    inc += g2v(i, l, a, b) * t2[(a * d + b) * m + l];
                }
            }
        }
        out[i] += inc;
    }
    if !with_jacobian {
        return (out, None);
    }

    let g3 = field.d3(y);
    let g3v = |i: usize, j: usize, a: usize, b: usize, c: usize| g3[(((i * m + j) * d + a) * d + b) * d + c];
    let mut jac = vec![0.0; d * d];
    let mut darea = vec![0.0; d * m * m];
    let mut dt1 = vec![0.0; d * m];
    let mut dt2 = vec![0.0; d * d * m];
    for q in 0..d {
        for a in 0..d {
            for j in 0..m {
                for k in 0..m {
                    darea[(a * m + j) * m + k] = (0..d).map(|b| g2v(a, k, b, q) * gv(b, j) + g1v(a, k, b) * g1v(b, j, q)).sum();
                }
            }
        }
        dt1.iter_mut().for_each(|v| *v = 0.0);
        dt2.iter_mut().for_each(|v| *v = 0.0);
        for l in 0..m {
            for j in 0..m {
                for k in 0..m {
                    let w = x3[(j * m + k) * m + l];
                    for a in 0..d {
                        dt1[a * m + l] += darea[(a * m + j) * m + k] * w;
                        for b in 0..d {
                            dt2[(a * d + b) * m + l] += (g1v(a, j, q) * gv(b, k) + gv(a, j) * g1v(b, k, q)) * w;
                        }
                    }
                }
            }
        }
        for i in 0..d {
            let mut s = if i == q { 1.0 } else { 0.0 };
            for j in 0..m {
                s += g1v(i, j, q) * x1[j];
            }
            for j in 0..m {
                for k in 0..m {
                    s += darea[(i * m + j) * m + k] * x2[j * m + k];
                }
            }
            for l in 0..m {
                for a in 0..d {
                    s += g2v(i, l, a, q) * t1[a * m + l] + g1v(i, l, a) * dt1[a * m + l];
                    for b in 0..d {
                        s += g3v(i, l, a, b, q) * t2[(a * d + b) * m + l] + g2v(i, l, a, b) * dt2[(a * d + b) * m + l];
                    }
                }
            }
            jac[i * d + q] = s;
        }
    }
    (out, Some(jac))
}

struct Piece {
    sig: TruncatedSignature,
    dt: f64,
    end: f64,
}

// 2^substeps pieces of the driver over knots [i, j]
fn step_pieces(lift: &KnotLift, i: usize, j: usize, substeps: u32) -> Result<Vec<Piece>> {
    let times = lift.times();
    let (t0, t1) = (times[i], times[j]);
    if substeps == 0 {
        return Ok(vec![Piece { sig: lift.between(i, j), dt: t1 - t0, end: t1 }]);
    }
    let n = 1usize << substeps;
    let cut = |q: usize| if q == n { t1 } else { t0 + (t1 - t0) * q as f64 / n as f64 };
    let mut out = Vec::with_capacity(n);
    if j == i + 1 {
        let delta: Vec<f64> = lift.path().knot(j).iter().zip(lift.path().knot(i)).map(|(b, a)| (b - a) / n as f64).collect();
        for q in 0..n {
            out.push(Piece { sig: TruncatedSignature::segment(&delta), dt: cut(q + 1) - cut(q), end: cut(q + 1) });
        }
    } else {
        for q in 0..n {
            let sig = lift.path().signature(cut(q), cut(q + 1))?;
            out.push(Piece { sig, dt: cut(q + 1) - cut(q), end: cut(q + 1) });
        }
    }
    Ok(out)
}

// the first `fraction` of the straight segment over knots [k, k+1], in 2^substeps pieces
fn partial_pieces(lift: &KnotLift, k: usize, fraction: f64, substeps: u32) -> Vec<Piece> {
    let times = lift.times();
    let n = 1usize << substeps;
    let h = (times[k + 1] - times[k]) * fraction / n as f64;
    let delta: Vec<f64> = lift
        .path()
        .knot(k + 1)
        .iter()
        .zip(lift.path().knot(k))
        .map(|(b, a)| (b - a) * fraction / n as f64)
        .collect();
    (0..n)
        .map(|q| Piece { sig: TruncatedSignature::segment(&delta), dt: h, end: times[k] + h * (q + 1) as f64 })
        .collect()
}

fn guard(y: &[f64], t: f64, cap: f64) -> Result<()> {
    let norm = euclid(y);
    if !(norm <= cap) {
        return Err(Error::Divergence { t, norm, cap });
    }
    Ok(())
}

// applies pieces in order, with an Euler drift term per piece
fn advance(
    field: &dyn SmoothField,
    drift: &dyn Drift,
    y: &mut Vec<f64>,
    jac: Option<&mut DMatrix<f64>>,
    pieces: &[Piece],
    cap: f64,
) -> Result<()> {
    let d = y.len();
    let mut jac = jac;
    for piece in pieces {
        let (mut next, step_jac) = scheme_step(field, y, &piece.sig, jac.is_some());
        let mut step_jac = step_jac.map(|j| DMatrix::from_row_slice(d, d, &j));
        if !drift.is_zero() {
            let f = drift.eval(y);
            for i in 0..d {
                next[i] += f[i] * piece.dt;
            }
            if let Some(sj) = step_jac.as_mut() {
                let df = drift.jacobian(y);
                for i in 0..d {
                    for q in 0..d {
                        sj[(i, q)] += df[i * d + q] * piece.dt;
                    }
                }
            }
        }
        guard(&next, piece.end, cap)?;
        *y = next;
        if let (Some(total), Some(sj)) = (jac.as_deref_mut(), step_jac) {
            *total = sj * &*total;
        }
    }
    Ok(())
}

fn step_points(lift: &KnotLift, a: usize, b: usize, opts: &StepOptions, stride: usize) -> Result<Vec<usize>> {
    if stride == 0 {
        return domain("step stride must be at least one knot");
    }
    let mut pts: Vec<usize> = (a..b).step_by(stride).collect();
    pts.push(b);
    if let Some(r) = opts.greedy_radius {
        let norms = PairNorms::from_lift(lift);
        pts.extend(greedy_times_pvar(&norms, r, a, b, opts.p)?.indices);
        pts.sort_unstable();
        pts.dedup();
    }
    Ok(pts)
}

fn check_field(field: &dyn SmoothField, driver: &KnotLift, y: &[f64]) -> Result<()> {
    if field.noise_dim() != driver.dim() || y.len() != field.state_dim() {
        return domain(format!(
            "field is {}x{}, driver has {} components, state has {}",
            field.state_dim(),
            field.noise_dim(),
            driver.dim(),
            y.len()
        ));
    }
    Ok(())
}

fn direct(
    field: &dyn SmoothField,
    drift: &dyn Drift,
    driver: &KnotLift,
    initial: &[f64],
    (a, b): (usize, usize),
    opts: &StepOptions,
) -> Result<RdeSolution> {
    check_field(field, driver, initial)?;
    let d = initial.len();
    let pts = step_points(driver, a, b, opts, opts.stride)?;
    let times = driver.times();
    let mut y = initial.to_vec();
    guard(&y, times[a], opts.cap)?;
    let mut jac = opts.track_jacobian.then(|| DMatrix::identity(d, d));
    let mut sol = RdeSolution {
        dim: d,
        knots: vec![a],
        times: vec![times[a]],
        states: vec![y.clone()],
        jacobians: jac.iter().cloned().collect(),
    };
    for w in pts.windows(2) {
        let pieces = step_pieces(driver, w[0], w[1], opts.substeps)?;
        advance(field, drift, &mut y, jac.as_mut(), &pieces, opts.cap)?;
        sol.knots.push(w[1]);
        sol.times.push(times[w[1]]);
        sol.states.push(y.clone());
        if let Some(j) = &jac {
            sol.jacobians.push(j.clone());
        }
    }
    Ok(sol)
}

/// dy = g(y) dB from `initial` at `start` to `end`; both times must be driver knots.
pub fn solve_pure_rde(
    field: &dyn SmoothField,
    driver: &KnotLift,
    initial: &[f64],
    start: f64,
    end: f64,
    opts: &StepOptions,
) -> Result<RdeSolution> {
    let range = (knot_index(driver, start)?, knot_index(driver, end)?);
    if range.0 >= range.1 {
        return domain(format!("need start < end, got [{start}, {end}]"));
    }
    direct(field, &ZeroDrift { d: initial.len() }, driver, initial, range, opts)
}

pub fn solve_rde_with_drift(problem: &RdeProblem, method: Method, opts: &StepOptions) -> Result<RdeSolution> {
    let range = problem.knot_range()?;
    match method {
        Method::Direct => direct(problem.diffusion.as_ref(), problem.drift.as_ref(), &problem.driver, &problem.initial, range, opts),
        Method::DossSussmann => doss_sussmann(problem, range, opts),
    }
}

/// ∂y_t/∂y_a along the direct solution, as the exact derivative of the discrete flow.
pub fn jacobian_flow(problem: &RdeProblem, opts: &StepOptions) -> Result<RdeSolution> {
    let opts = StepOptions { track_jacobian: true, ..opts.clone() };
    solve_rde_with_drift(problem, Method::Direct, &opts)
}

/// h_t = h_b + ∫_t^b g(h) dB, stepped from `end` back to `start` with reversed signatures.
/// States are stored in increasing time; jacobians are ∂h_t/∂h_b.
pub fn solve_backward_rde(
    field: &dyn SmoothField,
    driver: &KnotLift,
    terminal: &[f64],
    start: f64,
    end: f64,
    opts: &StepOptions,
) -> Result<RdeSolution> {
    check_field(field, driver, terminal)?;
    let (a, b) = (knot_index(driver, start)?, knot_index(driver, end)?);
    if a >= b {
        return domain(format!("need start < end, got [{start}, {end}]"));
    }
    let d = terminal.len();
    let pts = step_points(driver, a, b, opts, opts.stride)?;
    let times = driver.times();
    let zero = ZeroDrift { d };
    let mut h = terminal.to_vec();
    guard(&h, times[b], opts.cap)?;
    let mut jac = opts.track_jacobian.then(|| DMatrix::identity(d, d));
    let mut knots = vec![b];
    let mut states = vec![h.clone()];
    let mut jacobians: Vec<DMatrix<f64>> = jac.iter().cloned().collect();
    for w in pts.windows(2).rev() {
        let forward = step_pieces(driver, w[0], w[1], opts.substeps)?;
        let mut start_of = times[w[1]];
        let pieces: Vec<Piece> = forward
            .iter()
            .rev()
            .map(|p| {
                let end = start_of - p.dt;
                start_of = end;
                Piece { sig: p.sig.inverse(), dt: -p.dt, end }
            })
            .collect();
        advance(field, &zero, &mut h, jac.as_mut(), &pieces, opts.cap)?;
        knots.push(w[0]);
        states.push(h.clone());
        if let Some(j) = &jac {
            jacobians.push(j.clone());
        }
    }
    knots.reverse();
    states.reverse();
    jacobians.reverse();
    Ok(RdeSolution { dim: d, times: knots.iter().map(|&k| times[k]).collect(), knots, states, jacobians })
}

fn condition_number(j: &DMatrix<f64>) -> f64 {
    let s = j.singular_values();
    let (lo, hi) = (s.min(), s.max());
    if lo > 0.0 {
        hi / lo
    } else {
        f64::INFINITY
    }
}

// z ↦ (∂φ/∂z)^{-1} f(φ(t, z)), with φ the pure flow from the block start
fn transformed_vector_field(
    problem: &RdeProblem,
    z: &[f64],
    pieces: &[Piece],
    t: f64,
    cap: f64,
) -> Result<Vec<f64>> {
    let d = z.len();
    let zero = ZeroDrift { d };
    let mut phi = z.to_vec();
    let mut jac = DMatrix::identity(d, d);
    advance(problem.diffusion.as_ref(), &zero, &mut phi, Some(&mut jac), pieces, cap)?;
    let cond = condition_number(&jac);
    if !(cond <= MAX_CONDITION) {
        return Err(Error::Numeric(format!("flow Jacobian at t = {t} has condition number {cond:e}")));
    }
    let inv = jac
        .try_inverse()
        .ok_or_else(|| Error::Numeric(format!("flow Jacobian at t = {t} is singular")))?;
    let f = nalgebra::DVector::from_vec(problem.drift.eval(&phi));
    Ok((inv * f).iter().copied().collect())
}

fn doss_sussmann(problem: &RdeProblem, (a, b): (usize, usize), opts: &StepOptions) -> Result<RdeSolution> {
    let field = problem.diffusion.as_ref();
    let driver = problem.driver.as_ref();
    check_field(field, driver, &problem.initial)?;
    let d = problem.initial.len();
    let times = driver.times();
    let zero = ZeroDrift { d };
    let blocks = step_points(driver, a, b, opts, opts.block)?;
    let mut y = problem.initial.clone();
    guard(&y, times[a], opts.cap)?;
    let mut sol = RdeSolution { dim: d, knots: vec![a], times: vec![times[a]], states: vec![y.clone()], jacobians: Vec::new() };

    for w in blocks.windows(2) {
        let (tau, sigma) = (w[0], w[1]);
        let mut z = y.clone();
        // flow pieces from the block start to each knot
        let mut to_knot: Vec<Piece> = Vec::new();
        for k in tau..sigma {
            let h = times[k + 1] - times[k];
            let mid_pieces: Vec<Piece> = to_knot.iter().map(clone_piece).chain(partial_pieces(driver, k, 0.5, opts.substeps)).collect();
            let mut next_knot: Vec<Piece> = to_knot.iter().map(clone_piece).collect();
            next_knot.extend(step_pieces(driver, k, k + 1, opts.substeps)?);
            let tm = times[k] + 0.5 * h;

            let k1 = transformed_vector_field(problem, &z, &to_knot, times[k], opts.cap)?;
            let z2: Vec<f64> = (0..d).map(|i| z[i] + 0.5 * h * k1[i]).collect();
            let k2 = transformed_vector_field(problem, &z2, &mid_pieces, tm, opts.cap)?;
            let z3: Vec<f64> = (0..d).map(|i| z[i] + 0.5 * h * k2[i]).collect();
            let k3 = transformed_vector_field(problem, &z3, &mid_pieces, tm, opts.cap)?;
            let z4: Vec<f64> = (0..d).map(|i| z[i] + h * k3[i]).collect();
            let k4 = transformed_vector_field(problem, &z4, &next_knot, times[k + 1], opts.cap)?;
            for i in 0..d {
                z[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
            guard(&z, times[k + 1], opts.cap)?;

            let mut phi = z.clone();
            advance(field, &zero, &mut phi, None, &next_knot, opts.cap)?;
            y = phi;
            sol.knots.push(k + 1);
            sol.times.push(times[k + 1]);
            sol.states.push(y.clone());
            to_knot = next_knot;
        }
    }
    Ok(sol)
}

fn clone_piece(p: &Piece) -> Piece {
    Piece { sig: p.sig.clone(), dt: p.dt, end: p.end }
}

#[derive(Debug, Clone)]
pub struct AprioriOptions {
    /// The nonconstructive constant C_p of the controlled-integral estimate.
    pub c_p: f64,
    /// The positive integer M of the continuity estimate.
    pub m_const: u32,
    pub p: f64,
}

impl Default for AprioriOptions {
    fn default() -> Self {
        Self { c_p: 1.0, m_const: 1, p: DEFAULT_P }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum BoundStatus {
    Valid,
    Vacuous(String),
}

/// Constants and bounds of the a priori estimates for the pure equation on [a, b].
/// All values hold modulo C_p; the continuity values are parametric in M.
#[derive(Debug, Clone)]
pub struct AprioriReport {
    pub status: BoundStatus,
    pub c_g: f64,
    pub c_p: f64,
    pub m_const: u32,
    pub p: f64,
    pub interval: (f64, f64),
    /// Rough p-variation norm of the driver on [a, b].
    pub driver_norm: f64,
    pub theta1: f64,
    pub theta: Option<f64>,
    /// min{1/(2Θ₁) − 1, (1/(2Θ₁) − 1)^{1/3}}.
    pub solution_radius: Option<f64>,
    pub greedy_count: Option<usize>,
    pub greedy_count_bound: Option<f64>,
    pub sup_bound: Option<f64>,
    /// Θ/(1−Θ) N^{(2p−1)/p}.
    pub triple_bound: Option<f64>,
    /// Θ/(1−Θ) 2^{(p−1)/p} [1 + r^{1−2p} ‖B‖^{2p−1}].
    pub triple_bound_closed: Option<f64>,
    pub theta3: Option<f64>,
    /// min{1/(12Θ₃), (1/(12Θ₃))^{1/3}}.
    pub continuity_radius: Option<f64>,
    pub continuity_count: Option<usize>,
    pub continuity_count_bound: Option<f64>,
    /// 2^{N̄}, the bound on ‖ȳ − y‖_∞ / ‖ȳ_a − y_a‖.
    pub stability_factor: Option<f64>,
    /// N̄^{(p−1)/p} 2^{N̄} − 1, the bound on the difference triple norm over ‖ȳ_a − y_a‖.
    pub continuity_pvar_factor: Option<f64>,
}

pub fn theta1(c_g: f64, c_p: f64, length: f64, p: f64) -> f64 {
    c_p * (2.0 * c_g + (5.0 + 2.0 * length.powf(2.0 / p)) * c_g.powi(2) + 17.0 * c_g.powi(3) + 5.0 * c_g.powi(4))
        + 2.0 * c_g
        + 3.0 * c_g.powi(2)
        + 5.0 * c_g.powi(3)
}

pub fn theta3(c_g: f64, c_p: f64, m_const: u32, length: f64, p: f64, triple: f64) -> f64 {
    m_const as f64
        * c_p
        * (c_g + (1.0 + length.powf(2.0 / p)) * c_g.powi(2) + c_g.powi(3) + c_g.powi(4))
        * (1.0 + 2.0 * triple + triple * triple)
}

fn radius(u: f64) -> f64 {
    u.min(u.cbrt())
}

pub fn apriori_report(problem: &RdeProblem, opts: &AprioriOptions) -> Result<AprioriReport> {
    let norms = PairNorms::from_lift(&problem.driver);
    apriori_report_with_norms(problem, &norms, opts)
}

/// As [`apriori_report`] with precomputed pair norms of the driver.
pub fn apriori_report_with_norms(problem: &RdeProblem, norms: &PairNorms, opts: &AprioriOptions) -> Result<AprioriReport> {
    let (a, b) = problem.knot_range()?;
    if norms.points() != problem.driver.knots() {
        return domain("pair norms do not belong to the problem driver");
    }
    if !(opts.c_p > 0.0) || opts.m_const == 0 {
        return domain("C_p must be positive and M a positive integer");
    }
    let p = opts.p;
    let c_g = problem.diffusion.bound();
    let length = problem.end - problem.start;
    let driver_norm = rough_pvar_norm(norms, a, b, p)?;
    let th1 = theta1(c_g, opts.c_p, length, p);
    let mut report = AprioriReport {
        status: BoundStatus::Valid,
        c_g,
        c_p: opts.c_p,
        m_const: opts.m_const,
        p,
        interval: (problem.start, problem.end),
        driver_norm,
        theta1: th1,
        theta: None,
        solution_radius: None,
        greedy_count: None,
        greedy_count_bound: None,
        sup_bound: None,
        triple_bound: None,
        triple_bound_closed: None,
        theta3: None,
        continuity_radius: None,
        continuity_count: None,
        continuity_count_bound: None,
        stability_factor: None,
        continuity_pvar_factor: None,
    };
    if !c_g.is_finite() {
        report.status = BoundStatus::Vacuous("field is unbounded".into());
        return Ok(report);
    }
    let u = 1.0 / (2.0 * th1) - 1.0;
    if !(u > 0.0) {
        report.status = BoundStatus::Vacuous(format!("Θ₁ = {th1} leaves no admissible radius"));
        return Ok(report);
    }
    let r1 = radius(u);
    report.solution_radius = Some(r1);

    // every greedy interval carries norm at most min(r, ‖B‖_{[a,b]})
    let n = r1.min(driver_norm);
    let th = th1 * (1.0 + n.max(n * n).max(n * n * n));
    report.theta = Some(th);
    let count = greedy_times_pvar(norms, r1, a, b, p)?.count();
    report.greedy_count = Some(count);
    report.greedy_count_bound = Some(1.0 + r1.powf(-p) * driver_norm.powf(p));
    let ratio = th / (1.0 - th);
    report.sup_bound = Some(euclid(&problem.initial) + ratio * count as f64);
    report.triple_bound = Some(ratio * (count as f64).powf((2.0 * p - 1.0) / p));
    let closed = ratio * 2f64.powf((p - 1.0) / p) * (1.0 + r1.powf(1.0 - 2.0 * p) * driver_norm.powf(2.0 * p - 1.0));
    report.triple_bound_closed = Some(closed);

    let th3 = theta3(c_g, opts.c_p, opts.m_const, length, p, closed);
    report.theta3 = Some(th3);
    let r3 = if th3 > 0.0 { radius(1.0 / (12.0 * th3)) } else { f64::INFINITY };
    report.continuity_radius = Some(r3);
    let nbar = if r3.is_finite() { greedy_times_pvar(norms, r3, a, b, p)?.count() } else { 1 };
    report.continuity_count = Some(nbar);
    report.continuity_count_bound = Some(1.0 + r3.powf(-p) * driver_norm.powf(p));
    let factor = (std::f64::consts::LN_2 * nbar as f64).exp();
    report.stability_factor = Some(factor);
    report.continuity_pvar_factor = Some((nbar as f64).powf((p - 1.0) / p) * factor - 1.0);
    Ok(report)
}

impl AprioriReport {
    /// Checks a realized solution sup norm and an initial-value sensitivity ratio
    /// against the bounds; vacuous reports accept everything.
    pub fn check(&self, realized_sup: f64, realized_ratio: Option<f64>) -> Result<()> {
        if let Some(bound) = self.sup_bound {
            if realized_sup > bound {
                return Err(Error::Contract(format!("realized sup norm {realized_sup} exceeds the a priori bound {bound}")));
            }
        }
        if let (Some(bound), Some(r)) = (self.stability_factor, realized_ratio) {
            if r > bound {
                return Err(Error::Contract(format!("realized sensitivity ratio {r} exceeds 2^N̄ = {bound}")));
            }
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let opt = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{x:e}"));
        let optn = |v: Option<usize>| v.map_or("n/a".to_string(), |x| x.to_string());
        let mut s = String::new();
        let status = match &self.status {
            BoundStatus::Valid => "valid".to_string(),
            BoundStatus::Vacuous(why) => format!("vacuous ({why})"),
        };
        let _ = writeln!(s, "# a priori bounds, modulo the nonconstructive constant C_p; continuity bounds are parametric in M");
        let _ = writeln!(s, "status = {status}");
        let _ = writeln!(s, "interval = [{}, {}]", self.interval.0, self.interval.1);
        let _ = writeln!(s, "p = {}", self.p);
        let _ = writeln!(s, "C_g = {:e}", self.c_g);
        let _ = writeln!(s, "C_p = {}", self.c_p);
        let _ = writeln!(s, "M = {}", self.m_const);
        let _ = writeln!(s, "driver_pvar_norm = {:e}", self.driver_norm);
        let _ = writeln!(s, "theta1 = {:e}", self.theta1);
        let _ = writeln!(s, "theta = {}", opt(self.theta));
        let _ = writeln!(s, "solution_radius = {}", opt(self.solution_radius));
        let _ = writeln!(s, "greedy_count = {}", optn(self.greedy_count));
        let _ = writeln!(s, "greedy_count_bound = {}", opt(self.greedy_count_bound));
        let _ = writeln!(s, "sup_bound = {}", opt(self.sup_bound));
        let _ = writeln!(s, "triple_bound = {}", opt(self.triple_bound));
        let _ = writeln!(s, "triple_bound_closed = {}", opt(self.triple_bound_closed));
        let _ = writeln!(s, "theta3 = {}", opt(self.theta3));
        let _ = writeln!(s, "continuity_radius = {}", opt(self.continuity_radius));
        let _ = writeln!(s, "continuity_count = {}", optn(self.continuity_count));
        let _ = writeln!(s, "continuity_count_bound = {}", opt(self.continuity_count_bound));
        let _ = writeln!(s, "stability_factor = {}", opt(self.stability_factor));
        let _ = writeln!(s, "continuity_pvar_factor = {}", opt(self.continuity_pvar_factor));
        s
    }

    pub fn write_text(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }
}
