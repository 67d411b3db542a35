//! Level-3 truncated signatures, Chen concatenation, piecewise-linear lifts and
//! dyadic signature tables.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;

use crate::error::{domain, Result};
use crate::sampler::GaussianPathSample;

pub const DEFAULT_TABLE_DEPTH_CAP: u32 = 12;

/// (x, X², X³) over an interval; tensors are stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct TruncatedSignature {
    pub dim: usize,
    pub level1: Vec<f64>,
    pub level2: Vec<f64>,
    pub level3: Vec<f64>,
    pub interval: Option<(f64, f64)>,
}

impl TruncatedSignature {
    pub fn identity(dim: usize) -> Self {
        Self {
            dim,
            level1: vec![0.0; dim],
            level2: vec![0.0; dim * dim],
            level3: vec![0.0; dim * dim * dim],
            interval: None,
        }
    }

    /// Signature of a straight segment with increment `delta`.
    pub fn segment(delta: &[f64]) -> Self {
        let d = delta.len();
        let mut s = Self::identity(d);
        s.level1.copy_from_slice(delta);
        for i in 0..d {
            for j in 0..d {
                let p = delta[i] * delta[j];
                s.level2[i * d + j] = p / 2.0;
                for k in 0..d {
                    s.level3[(i * d + j) * d + k] = p * delta[k] / 6.0;
                }
            }
        }
        s
    }

    pub fn with_interval(mut self, s: f64, t: f64) -> Self {
        self.interval = Some((s, t));
        self
    }

    /// Chen product: `self` over [s,u] followed by `next` over [u,t].
    pub fn concat(&self, next: &Self) -> Result<Self> {
        if self.dim != next.dim {
            return domain(format!("cannot concatenate dimensions {} and {}", self.dim, next.dim));
        }
        let interval = match (self.interval, next.interval) {
            (Some((s, u1)), Some((u2, t))) => {
                if (u1 - u2).abs() > 1e-12 * (1.0 + u1.abs()) {
                    return domain(format!("intervals [{s}, {u1}] and [{u2}, {t}] are not adjacent"));
                }
                Some((s, t))
            }
            (a, None) => a,
            (None, b) => b,
        };
        let mut out = self.concat_unchecked(next);
        out.interval = interval;
        Ok(out)
    }

    pub(crate) fn concat_unchecked(&self, b: &Self) -> Self {
        let d = self.dim;
        let a = self;
        let mut out = Self::identity(d);
        for i in 0..d {
            out.level1[i] = a.level1[i] + b.level1[i];
        }
        for i in 0..d {
            for j in 0..d {
                let ij = i * d + j;
                out.level2[ij] = a.level2[ij] + b.level2[ij] + a.level1[i] * b.level1[j];
                for k in 0..d {
                    let ijk = ij * d + k;
                    out.level3[ijk] = a.level3[ijk]
                        + b.level3[ijk]
                        + a.level2[ij] * b.level1[k]
                        + a.level1[i] * b.level2[j * d + k];
                }
            }
        }
        out
    }

    pub fn inverse(&self) -> Self {
        let d = self.dim;
        let x = &self.level1;
        let x2 = &self.level2;
        let mut out = Self::identity(d);
        for i in 0..d {
            out.level1[i] = -x[i];
        }
        for i in 0..d {
            for j in 0..d {
                let ij = i * d + j;
                out.level2[ij] = -x2[ij] + x[i] * x[j];
                for k in 0..d {
                    let ijk = ij * d + k;
                    out.level3[ijk] = -self.level3[ijk] + x[i] * x2[j * d + k] + x2[ij] * x[k]
                        - x[i] * x[j] * x[k];
                }
            }
        }
        out.interval = self.interval.map(|(s, t)| (t, s));
        out
    }

    pub fn level(&self, j: usize) -> &[f64] {
        match j {
            1 => &self.level1,
            2 => &self.level2,
            3 => &self.level3,
            _ => panic!("signature level {j} not stored"),
        }
    }

    pub fn level2_at(&self, i: usize, j: usize) -> f64 {
        self.level2[i * self.dim + j]
    }

    pub fn level3_at(&self, i: usize, j: usize, k: usize) -> f64 {
        self.level3[(i * self.dim + j) * self.dim + k]
    }

    /// Largest absolute entry difference against `other`, over all three levels.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.level1
            .iter()
            .chain(&self.level2)
            .chain(&self.level3)
            .zip(other.level1.iter().chain(&other.level2).chain(&other.level3))
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// max |X² + (X²)ᵀ − x⊗x|.
    pub fn symmetry_residual(&self) -> f64 {
        let d = self.dim;
        let mut r = 0.0f64;
        for i in 0..d {
            for j in 0..d {
                let v = self.level2_at(i, j) + self.level2_at(j, i) - self.level1[i] * self.level1[j];
                r = r.max(v.abs());
            }
        }
        r
    }

    /// max |x^i X²^{jk} − X³^{ijk} − X³^{jik} − X³^{jki}|.
    pub fn shuffle_residual(&self) -> f64 {
        let d = self.dim;
        let mut r = 0.0f64;
        for i in 0..d {
            for j in 0..d {
                for k in 0..d {
                    let v = self.level1[i] * self.level2_at(j, k)
                        - self.level3_at(i, j, k)
                        - self.level3_at(j, i, k)
                        - self.level3_at(j, k, i);
                    r = r.max(v.abs());
                }
            }
        }
        r
    }
}

/// Chen residuals at levels 2 and 3 for S_{s,t} against S_{s,u}, S_{u,t}.
pub fn chen_residuals(left: &TruncatedSignature, right: &TruncatedSignature, whole: &TruncatedSignature) -> (f64, f64) {
    let d = whole.dim;
    let mut r2 = 0.0f64;
    let mut r3 = 0.0f64;
    for i in 0..d {
        for j in 0..d {
            let v = whole.level2_at(i, j) - left.level2_at(i, j) - right.level2_at(i, j) - left.level1[i] * right.level1[j];
            r2 = r2.max(v.abs());
            for k in 0..d {
                let v = whole.level3_at(i, j, k)
                    - left.level3_at(i, j, k)
                    - right.level3_at(i, j, k)
                    - left.level2_at(i, j) * right.level1[k]
                    - left.level1[i] * right.level2_at(j, k);
                r3 = r3.max(v.abs());
            }
        }
    }
    (r2, r3)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseLinearPath {
    pub dim: usize,
    times: Vec<f64>,
    values: Vec<f64>,
}

impl PiecewiseLinearPath {
    pub fn new(times: Vec<f64>, values: Vec<f64>, dim: usize) -> Result<Self> {
        if times.len() < 2 {
            return domain("a piecewise-linear path needs at least two knots");
        }
        if dim == 0 || values.len() != times.len() * dim {
            return domain(format!("expected {} values for {} knots of dimension {dim}", times.len() * dim, times.len()));
        }
        if !times.windows(2).all(|w| w[0] < w[1]) {
            return domain("knot times must be strictly increasing");
        }
        Ok(Self { dim, times, values })
    }

    pub fn from_sample(sample: &GaussianPathSample) -> Self {
        Self { dim: sample.dim, times: sample.grid.points(), values: sample.values.clone() }
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn knot(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn knots(&self) -> usize {
        self.times.len()
    }

    fn check_time(&self, t: f64) -> Result<()> {
        let (a, b) = (self.times[0], *self.times.last().unwrap());
        if !(t >= a && t <= b) {
            return domain(format!("time {t} outside path domain [{a}, {b}]"));
        }
        Ok(())
    }

    // index i with times[i] <= t < times[i+1], clamped to the last segment
    fn segment_index(&self, t: f64) -> usize {
        let i = self.times.partition_point(|&x| x <= t);
        i.saturating_sub(1).min(self.times.len() - 2)
    }

    pub fn eval(&self, t: f64) -> Result<Vec<f64>> {
        self.check_time(t)?;
        let i = self.segment_index(t);
        if t == self.times[i] {
            return Ok(self.knot(i).to_vec());
        }
        if t == self.times[i + 1] {
            return Ok(self.knot(i + 1).to_vec());
        }
        let w = (t - self.times[i]) / (self.times[i + 1] - self.times[i]);
        Ok(self.knot(i).iter().zip(self.knot(i + 1)).map(|(a, b)| a + w * (b - a)).collect())
    }

    /// Exact level-3 signature over [s, t].
    pub fn signature(&self, s: f64, t: f64) -> Result<TruncatedSignature> {
        self.check_time(s)?;
        self.check_time(t)?;
        if !(s < t) {
            return domain(format!("signature interval needs s < t, got [{s}, {t}]"));
        }
        let mut points = vec![s];
        let first = self.times.partition_point(|&x| x <= s);
        for &x in &self.times[first..] {
            if x >= t {
                break;
            }
            points.push(x);
        }
        points.push(t);
        let vals: Vec<Vec<f64>> = points.iter().map(|&p| self.eval(p)).collect::<Result<_>>()?;
        let mut sig = TruncatedSignature::identity(self.dim);
        for w in vals.windows(2) {
            let delta: Vec<f64> = w[1].iter().zip(&w[0]).map(|(b, a)| b - a).collect();
            sig = sig.concat_unchecked(&TruncatedSignature::segment(&delta));
        }
        // level one as a plain value difference
        for c in 0..self.dim {
            sig.level1[c] = vals[vals.len() - 1][c] - vals[0][c];
        }
        Ok(sig.with_interval(s, t))
    }

    /// S_{t_0, t_i} for every knot i.
    pub fn prefix_signatures(&self) -> Vec<TruncatedSignature> {
        let mut out = Vec::with_capacity(self.knots());
        let mut cur = TruncatedSignature::identity(self.dim).with_interval(self.times[0], self.times[0]);
        out.push(cur.clone());
        for i in 1..self.knots() {
            let delta: Vec<f64> = self.knot(i).iter().zip(self.knot(i - 1)).map(|(b, a)| b - a).collect();
            cur = cur.concat_unchecked(&TruncatedSignature::segment(&delta));
            cur.interval = Some((self.times[0], self.times[i]));
            out.push(cur.clone());
        }
        out
    }
}

/// Knot-to-knot signatures of a piecewise-linear path via prefix products.
#[derive(Debug, Clone)]
pub struct KnotLift {
    path: PiecewiseLinearPath,
    prefix: Vec<TruncatedSignature>,
    prefix_inv: Vec<TruncatedSignature>,
}

impl KnotLift {
    pub fn new(path: PiecewiseLinearPath) -> Self {
        let prefix = path.prefix_signatures();
        let prefix_inv = prefix.iter().map(|s| s.inverse()).collect();
        Self { path, prefix, prefix_inv }
    }

    pub fn path(&self) -> &PiecewiseLinearPath {
        &self.path
    }

    pub fn knots(&self) -> usize {
        self.path.knots()
    }

    pub fn times(&self) -> &[f64] {
        self.path.times()
    }

    pub fn dim(&self) -> usize {
        self.path.dim
    }

    /// S_{t_i, t_j} = S_{0,t_i}^{-1} ⊗ S_{0,t_j}, with level one taken as a value difference.
    pub fn between(&self, i: usize, j: usize) -> TruncatedSignature {
        if i == j {
            let t = self.path.times[i];
            return TruncatedSignature::identity(self.dim()).with_interval(t, t);
        }
        let mut s = self.prefix_inv[i].concat_unchecked(&self.prefix[j]);
        for c in 0..self.dim() {
            s.level1[c] = self.path.knot(j)[c] - self.path.knot(i)[c];
        }
        s.interval = Some((self.path.times[i], self.path.times[j]));
        s
    }
}

/// Signatures over all dyadic cells [t^n_{k-1}, t^n_k], n = 0..=depth, of the
/// piecewise-linear interpolation of a sample at `path_level`.
#[derive(Debug, Clone)]
pub struct SignatureTable {
    pub dim: usize,
    pub depth: u32,
    pub path_level: u32,
    pub horizon: f64,
    levels: Vec<Vec<TruncatedSignature>>,
}

impl SignatureTable {
    /// Builds the table of the level-`path_level` interpolation of `sample`.
    pub fn from_sample(sample: &GaussianPathSample, path_level: u32, depth: u32) -> Result<Self> {
        Self::from_sample_with_cap(sample, path_level, depth, DEFAULT_TABLE_DEPTH_CAP)
    }

    pub fn from_sample_with_cap(sample: &GaussianPathSample, path_level: u32, depth: u32, cap: u32) -> Result<Self> {
        if depth > cap {
            return domain(format!("table depth {depth} exceeds cap {cap}"));
        }
        let coarse = sample.restrict(path_level)?;
        let d = sample.dim;
        let horizon = sample.grid.horizon;
        let cells = 1usize << depth;
        let value = |k: usize| coarse.row(k);

        // finest table level
        let finest: Vec<TruncatedSignature> = (0..cells)
            .into_par_iter()
            .map(|c| {
                let t0 = horizon * c as f64 / cells as f64;
                let t1 = horizon * (c + 1) as f64 / cells as f64;
                let mut sig = if depth >= path_level {
                    let per = 1usize << (depth - path_level);
                    let l = c / per;
                    let delta: Vec<f64> = value(l + 1).iter().zip(value(l)).map(|(b, a)| (b - a) / per as f64).collect();
                    TruncatedSignature::segment(&delta)
                } else {
                    let per = 1usize << (path_level - depth);
                    let mut s = TruncatedSignature::identity(d);
                    for l in c * per..(c + 1) * per {
                        let delta: Vec<f64> = value(l + 1).iter().zip(value(l)).map(|(b, a)| b - a).collect();
                        s = s.concat_unchecked(&TruncatedSignature::segment(&delta));
                    }
                    s
                };
                sig.interval = Some((t0, t1));
                sig
            })
            .collect();

        let mut levels = vec![finest];
        for _ in 0..depth {
            let prev = levels.last().unwrap();
            let next: Vec<TruncatedSignature> = prev
                .par_chunks(2)
                .map(|pair| {
                    let mut s = pair[0].concat_unchecked(&pair[1]);
                    s.interval = Some((pair[0].interval.unwrap().0, pair[1].interval.unwrap().1));
                    s
                })
                .collect();
            levels.push(next);
        }
        levels.reverse();

        // level one as value differences of the interpolated path
        for (n, row) in levels.iter_mut().enumerate() {
            for (c, sig) in row.iter_mut().enumerate() {
                if n as u32 <= path_level {
                    let stride = 1usize << (path_level - n as u32);
                    for i in 0..d {
                        sig.level1[i] = value((c + 1) * stride)[i] - value(c * stride)[i];
                    }
                } else {
                    let per = 1usize << (n as u32 - path_level);
                    let l = c / per;
                    for i in 0..d {
                        sig.level1[i] = (value(l + 1)[i] - value(l)[i]) / per as f64;
                    }
                }
            }
        }
        Ok(Self { dim: d, depth, path_level, horizon, levels })
    }

    /// Entry for cell k (1-based) at level n.
    pub fn get(&self, n: u32, k: usize) -> Result<&TruncatedSignature> {
        if n > self.depth {
            return domain(format!("table level {n} deeper than {}", self.depth));
        }
        if k == 0 || k > (1usize << n) {
            return domain(format!("cell index {k} outside 1..=2^{n}"));
        }
        Ok(&self.levels[n as usize][k - 1])
    }

    pub fn level_entries(&self, n: u32) -> &[TruncatedSignature] {
        &self.levels[n as usize]
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        writeln!(w, "n,k,level,flat_index,value")?;
        for (n, row) in self.levels.iter().enumerate() {
            for (c, sig) in row.iter().enumerate() {
                for j in 1..=3 {
                    for (idx, v) in sig.level(j).iter().enumerate() {
                        writeln!(w, "{n},{},{j},{idx},{v}", c + 1)?;
                    }
                }
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Closed form of the level-2 change B^{m+1,2} − B^{m,2} on [t^n_{k-1}, t^n_k], n ≤ m:
/// (1/2) Σ_l [Δ^{m+1}_{2l-1} ⊗ Δ^{m+1}_{2l} − Δ^{m+1}_{2l} ⊗ Δ^{m+1}_{2l-1}].
pub fn refinement_delta_level2(sample: &GaussianPathSample, m: u32, n: u32, k: usize) -> Result<Vec<f64>> {
    if n > m {
        return domain(format!("refinement delta needs n <= m, got n = {n}, m = {m}"));
    }
    if m + 1 > sample.grid.level {
        return domain(format!("sample at level {} cannot resolve level {}", sample.grid.level, m + 1));
    }
    if k == 0 || k > (1usize << n) {
        return domain(format!("cell index {k} outside 1..=2^{n}"));
    }
    let d = sample.dim;
    let stride = 1usize << (sample.grid.level - m - 1);
    let inc = |i: usize| -> Vec<f64> {
        let a = sample.row((i - 1) * stride);
        let b = sample.row(i * stride);
        b.iter().zip(a).map(|(x, y)| x - y).collect()
    };
    let per = 1usize << (m - n);
    let mut out = vec![0.0; d * d];
    for l in per * (k - 1) + 1..=per * k {
        let a = inc(2 * l - 1);
        let b = inc(2 * l);
        for i in 0..d {
            for j in 0..d {
                out[i * d + j] += 0.5 * (a[i] * b[j] - b[i] * a[j]);
            }
        }
    }
    Ok(out)
}
