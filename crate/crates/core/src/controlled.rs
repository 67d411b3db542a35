//! Controlled paths (y, y′, y″) over a lifted driver, smooth vector fields, the
//! compensated rough integral and controlled-path norms.

use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{domain, Result};
use crate::norms::{euclid, holder_norm, p_variation};
use crate::signature::{KnotLift, TruncatedSignature};

/// A field g: ℝ^d → L(ℝ^m, ℝ^d) with derivatives up to order three.
///
/// Layouts: g[i*m + j]; Dg[(i*m + j)*d + a] = ∂_a g_ij; higher derivatives append
/// further state indices in the same way.
pub trait SmoothField: Send + Sync {
    fn state_dim(&self) -> usize;
    fn noise_dim(&self) -> usize;
    fn eval(&self, y: &[f64]) -> Vec<f64>;
    fn d1(&self, y: &[f64]) -> Vec<f64>;
    fn d2(&self, y: &[f64]) -> Vec<f64>;
    fn d3(&self, y: &[f64]) -> Vec<f64>;
    /// Common bound C_g on the sup norms of g and its first three derivatives (may be infinite).
    fn bound(&self) -> f64;
}

/// g ≡ σ.
#[derive(Debug, Clone)]
pub struct ConstantField {
    pub d: usize,
    pub m: usize,
    pub sigma: Vec<f64>,
}

impl SmoothField for ConstantField {
    fn state_dim(&self) -> usize {
        self.d
    }
    fn noise_dim(&self) -> usize {
        self.m
    }
    fn eval(&self, _: &[f64]) -> Vec<f64> {
        self.sigma.clone()
    }
    fn d1(&self, _: &[f64]) -> Vec<f64> {
        vec![0.0; self.d * self.m * self.d]
    }
    fn d2(&self, _: &[f64]) -> Vec<f64> {
        vec![0.0; self.d * self.m * self.d * self.d]
    }
    fn d3(&self, _: &[f64]) -> Vec<f64> {
        vec![0.0; self.d * self.m * self.d.pow(3)]
    }
    fn bound(&self) -> f64 {
        euclid(&self.sigma)
    }
}

/// Scalar polynomial field g(y) = Σ c_k y^k with d = m = 1.
#[derive(Debug, Clone)]
pub struct ScalarPolynomial {
    pub coeffs: Vec<f64>,
}

impl ScalarPolynomial {
    /// The linear scalar field g(y) = a·y.
    pub fn linear(a: f64) -> Self {
        Self { coeffs: vec![0.0, a] }
    }

    fn derivative(&self, order: usize, y: f64) -> f64 {
        let mut s = 0.0;
        for (k, c) in self.coeffs.iter().enumerate().skip(order) {
            let falling: f64 = (k + 1 - order..=k).map(|v| v as f64).product();
            s += c * falling * y.powi((k - order) as i32);
        }
        s
    }
}

impl SmoothField for ScalarPolynomial {
    fn state_dim(&self) -> usize {
        1
    }
    fn noise_dim(&self) -> usize {
        1
    }
    fn eval(&self, y: &[f64]) -> Vec<f64> {
        vec![self.derivative(0, y[0])]
    }
    fn d1(&self, y: &[f64]) -> Vec<f64> {
        vec![self.derivative(1, y[0])]
    }
    fn d2(&self, y: &[f64]) -> Vec<f64> {
        vec![self.derivative(2, y[0])]
    }
    fn d3(&self, y: &[f64]) -> Vec<f64> {
        vec![self.derivative(3, y[0])]
    }
    fn bound(&self) -> f64 {
        if self.coeffs.iter().skip(1).all(|&c| c == 0.0) {
            self.coeffs.first().copied().unwrap_or(0.0).abs()
        } else {
            f64::INFINITY
        }
    }
}

/// g_ij(y) = a·sin(y_{(i+j) mod d} + c_ij), bounded with all derivatives by a·√(dm).
#[derive(Debug, Clone)]
pub struct SineField {
    pub d: usize,
    pub m: usize,
    pub amplitude: f64,
    pub phases: Vec<f64>,
}

impl SineField {
    pub fn new(d: usize, m: usize, amplitude: f64, phases: Vec<f64>) -> Result<Self> {
        if d == 0 || m == 0 || phases.len() != d * m {
            return domain(format!("sine field needs {} phases for d = {d}, m = {m}", d * m));
        }
        Ok(Self { d, m, amplitude, phases })
    }

    /// The built-in test problem field with phases c_ij = 0.3·(i + 2j).
    pub fn standard(d: usize, m: usize, amplitude: f64) -> Self {
        let phases = (0..d * m).map(|k| 0.3 * ((k / m) as f64 + 2.0 * (k % m) as f64)).collect();
        Self { d, m, amplitude, phases }
    }

    fn arg(&self, i: usize, j: usize, y: &[f64]) -> (usize, f64) {
        let a = (i + j) % self.d;
        (a, y[a] + self.phases[i * self.m + j])
    }
}

impl SmoothField for SineField {
    fn state_dim(&self) -> usize {
        self.d
    }
    fn noise_dim(&self) -> usize {
        self.m
    }
    fn eval(&self, y: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.d * self.m];
        for i in 0..self.d {
            for j in 0..self.m {
                g[i * self.m + j] = self.amplitude * self.arg(i, j, y).1.sin();
            }
        }
        g
    }
    fn d1(&self, y: &[f64]) -> Vec<f64> {
        let d = self.d;
        let mut g = vec![0.0; d * self.m * d];
        for i in 0..d {
            for j in 0..self.m {
                let (a, u) = self.arg(i, j, y);
                g[(i * self.m + j) * d + a] = self.amplitude * u.cos();
            }
        }
        g
    }
    fn d2(&self, y: &[f64]) -> Vec<f64> {
        let d = self.d;
        let mut g = vec![0.0; d * self.m * d * d];
        for i in 0..d {
            for j in 0..self.m {
                let (a, u) = self.arg(i, j, y);
                g[((i * self.m + j) * d + a) * d + a] = -self.amplitude * u.sin();
            }
        }
        g
    }
    fn d3(&self, y: &[f64]) -> Vec<f64> {
        let d = self.d;
        let mut g = vec![0.0; d * self.m * d * d * d];
        for i in 0..d {
            for j in 0..self.m {
                let (a, u) = self.arg(i, j, y);
                g[(((i * self.m + j) * d + a) * d + a) * d + a] = -self.amplitude * u.cos();
            }
        }
        g
    }
    fn bound(&self) -> f64 {
        self.amplitude * ((self.d * self.m) as f64).sqrt()
    }
}

/// (y, y′, y″) on the knots of a lifted driver. y′[i*m + j] = (y′ e_j)_i and
/// y″[(i*m + j)*m + k] = (y″ (e_j ⊗ e_k))_i.
#[derive(Debug, Clone)]
pub struct ControlledPath {
    pub dim: usize,
    pub noise_dim: usize,
    pub y: Vec<Vec<f64>>,
    pub y1: Vec<Vec<f64>>,
    pub y2: Vec<Vec<f64>>,
    pub driver: Arc<KnotLift>,
}

impl ControlledPath {
    pub fn new(driver: Arc<KnotLift>, dim: usize, y: Vec<Vec<f64>>, y1: Vec<Vec<f64>>, y2: Vec<Vec<f64>>) -> Result<Self> {
        let n = driver.knots();
        let m = driver.dim();
        if y.len() != n || y1.len() != n || y2.len() != n {
            return domain(format!("controlled path needs {n} knots"));
        }
        if y.iter().any(|v| v.len() != dim)
            || y1.iter().any(|v| v.len() != dim * m)
            || y2.iter().any(|v| v.len() != dim * m * m)
        {
            return domain("controlled path component shapes do not match (d, m)");
        }
        Ok(Self { dim, noise_dim: m, y, y1, y2, driver })
    }

    pub fn knots(&self) -> usize {
        self.y.len()
    }

    fn knot_index(&self, t: f64) -> Result<usize> {
        let times = self.driver.times();
        let i = times.partition_point(|&x| x < t - 1e-12 * (1.0 + t.abs()));
        if i < times.len() && (times[i] - t).abs() <= 1e-12 * (1.0 + t.abs()) {
            Ok(i)
        } else {
            domain(format!("time {t} is not a grid point of the driver"))
        }
    }

    /// (R♯_{s,t}, R♯♯_{s,t}) at knot indices.
    pub fn remainders_at(&self, s: usize, t: usize) -> (Vec<f64>, Vec<f64>) {
        let sig = self.driver.between(s, t);
        self.remainders_with(s, t, &sig)
    }

    fn remainders_with(&self, s: usize, t: usize, sig: &TruncatedSignature) -> (Vec<f64>, Vec<f64>) {
        let (d, m) = (self.dim, self.noise_dim);
        let mut rs = vec![0.0; d];
        let mut rss = vec![0.0; d * m];
        for i in 0..d {
            let mut v = self.y[t][i] - self.y[s][i];
            for j in 0..m {
                v -= self.y1[s][i * m + j] * sig.level1[j];
                for k in 0..m {
                    v -= self.y2[s][(i * m + j) * m + k] * sig.level2[j * m + k];
                }
            }
            rs[i] = v;
            for k in 0..m {
                let mut w = self.y1[t][i * m + k] - self.y1[s][i * m + k];
                for j in 0..m {
                    w -= self.y2[s][(i * m + j) * m + k] * sig.level1[j];
                }
                rss[i * m + k] = w;
            }
        }
        (rs, rss)
    }

    /// (R♯_{s,t}, R♯♯_{s,t}) at grid times.
    pub fn remainders(&self, s: f64, t: f64) -> Result<(Vec<f64>, Vec<f64>)> {
        Ok(self.remainders_at(self.knot_index(s)?, self.knot_index(t)?))
    }
}

/// Controlled triple of g(y), flattened to a (d·m)-dimensional path:
/// z′(e_j) = Dg[y′e_j], z″(e_a⊗e_b) = Dg[y″(e_a⊗e_b)] + D²g[y′e_a, y′e_b].
pub fn compose_smooth(field: &dyn SmoothField, cp: &ControlledPath) -> Result<ControlledPath> {
    let d = field.state_dim();
    let gm = field.noise_dim();
    if d != cp.dim {
        return domain(format!("field state dimension {d} differs from path dimension {}", cp.dim));
    }
    let m = cp.noise_dim;
    let out_dim = d * gm;
    let n = cp.knots();
    let mut z = Vec::with_capacity(n);
    let mut z1 = Vec::with_capacity(n);
    let mut z2 = Vec::with_capacity(n);
    for t in 0..n {
        let y = &cp.y[t];
        let (g, dg, d2g) = (field.eval(y), field.d1(y), field.d2(y));
        let mut p1 = vec![0.0; out_dim * m];
        let mut p2 = vec![0.0; out_dim * m * m];
        for r in 0..out_dim {
            for a in 0..m {
                let mut v = 0.0;
                for l in 0..d {
                    v += dg[r * d + l] * cp.y1[t][l * m + a];
                }
                p1[r * m + a] = v;
                for b in 0..m {
                    let mut w = 0.0;
                    for l in 0..d {
                        w += dg[r * d + l] * cp.y2[t][(l * m + a) * m + b];
                        for q in 0..d {
                            w += d2g[(r * d + l) * d + q] * cp.y1[t][l * m + a] * cp.y1[t][q * m + b];
                        }
                    }
                    p2[(r * m + a) * m + b] = w;
                }
            }
        }
        z.push(g);
        z1.push(p1);
        z2.push(p2);
    }
    ControlledPath::new(cp.driver.clone(), out_dim, z, z1, z2)
}

#[derive(Debug, Clone)]
pub struct IntegralResult {
    /// ∫ y ⊗ dx as a row-major d × m array.
    pub value: Vec<f64>,
    /// Largest entry change between the last two partitions.
    pub cauchy_increment: f64,
    pub refinements: usize,
    pub converged: bool,
}

fn compensated_term(cp: &ControlledPath, u: usize, sig: &TruncatedSignature) -> Vec<f64> {
    let (d, m) = (cp.dim, cp.noise_dim);
    let mut out = vec![0.0; d * m];
    for i in 0..d {
        for l in 0..m {
            let mut v = cp.y[u][i] * sig.level1[l];
            for j in 0..m {
                v += cp.y1[u][i * m + j] * sig.level2[j * m + l];
                for k in 0..m {
                    v += cp.y2[u][(i * m + j) * m + k] * sig.level3[(j * m + k) * m + l];
                }
            }
            out[i * m + l] = v;
        }
    }
    out
}

/// Compensated sum Σ (y_u ⊗ x_{u,v} + y′_u X²_{u,v} + y″_u X³_{u,v}) over the given knot partition.
pub fn compensated_sum(cp: &ControlledPath, partition: &[usize]) -> Vec<f64> {
    let terms: Vec<Vec<f64>> = partition
        .par_windows(2)
        .map(|w| compensated_term(cp, w[0], &cp.driver.between(w[0], w[1])))
        .collect();
    let mut total = vec![0.0; cp.dim * cp.noise_dim];
    for t in &terms {
        for (a, b) in total.iter_mut().zip(t) {
            *a += b;
        }
    }
    total
}

/// Knots s = u_0 < ... < u_{2^r} = t splitting [s, t] dyadically (rounded to the grid).
pub fn dyadic_partition(s: usize, t: usize, refinement: u32) -> Vec<usize> {
    let pieces = 1usize << refinement;
    let mut out: Vec<usize> = (0..=pieces).map(|i| s + ((t - s) * i + pieces / 2) / pieces).collect();
    out.dedup();
    out
}

/// Rough integral over knots [s, t] by compensated sums on successively halved partitions.
pub fn rough_integral(cp: &ControlledPath, s: usize, t: usize, rel_tol: f64) -> Result<IntegralResult> {
    if !(s < t && t < cp.knots()) {
        return domain(format!("integration range [{s}, {t}] invalid for {} knots", cp.knots()));
    }
    let mut prev = compensated_sum(cp, &[s, t]);
    let mut r = 0;
    loop {
        r += 1;
        let part = dyadic_partition(s, t, r);
        let cur = compensated_sum(cp, &part);
        let inc = cur.iter().zip(&prev).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let scale = cur.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let finest = part.len() == t - s + 1;
        if inc <= rel_tol * scale || finest {
            let converged = inc <= rel_tol * scale;
            if !converged {
                log::warn!("rough integral reached the finest grid with Cauchy increment {inc:e}");
            }
            return Ok(IntegralResult { value: cur, cauchy_increment: inc, refinements: r as usize, converged });
        }
        prev = cur;
    }
}

pub const DEFAULT_INTEGRAL_TOL: f64 = 1e-10;

/// ‖y″‖_{p-var} + ‖R♯‖_{p/3-var} + ‖R♯♯‖_{p/2-var} over knots [a, b].
pub fn controlled_norm(cp: &ControlledPath, a: usize, b: usize, p: f64) -> Result<f64> {
    if !(a < b && b < cp.knots()) {
        return domain(format!("knot range [{a}, {b}] invalid"));
    }
    let n = b - a + 1;
    let rem = remainder_norm_tables(cp, a, b);
    let ypp = p_variation(n, |i, j| dist(&cp.y2[a + j], &cp.y2[a + i]), p)?;
    let r1 = p_variation(n, |i, j| rem.0[i * n + j], p / 3.0)?;
    let r2 = p_variation(n, |i, j| rem.1[i * n + j], p / 2.0)?;
    Ok(ypp + r1 + r2)
}

/// ‖y″‖_α + ‖R♯‖_{3α} + ‖R♯♯‖_{2α} over knots [a, b].
pub fn controlled_norm_holder(cp: &ControlledPath, a: usize, b: usize, alpha: f64) -> Result<f64> {
    if !(a < b && b < cp.knots()) {
        return domain(format!("knot range [{a}, {b}] invalid"));
    }
    let n = b - a + 1;
    let times = &cp.driver.times()[a..=b];
    let rem = remainder_norm_tables(cp, a, b);
    let ypp = holder_norm(times, |i, j| dist(&cp.y2[a + j], &cp.y2[a + i]), alpha)?;
    let r1 = holder_norm(times, |i, j| rem.0[i * n + j], (3.0 * alpha).min(1.0))?;
    let r2 = holder_norm(times, |i, j| rem.1[i * n + j], 2.0 * alpha)?;
    Ok(ypp + r1 + r2)
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn remainder_norm_tables(cp: &ControlledPath, a: usize, b: usize) -> (Vec<f64>, Vec<f64>) {
    let n = b - a + 1;
    let rows: Vec<(Vec<f64>, Vec<f64>)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut r1 = vec![0.0; n];
            let mut r2 = vec![0.0; n];
            for j in i + 1..n {
                let (x, y) = cp.remainders_at(a + i, a + j);
                r1[j] = euclid(&x);
                r2[j] = euclid(&y);
            }
            (r1, r2)
        })
        .collect();
    let mut t1 = Vec::with_capacity(n * n);
    let mut t2 = Vec::with_capacity(n * n);
    for (r1, r2) in rows {
        t1.extend(r1);
        t2.extend(r2);
    }
    (t1, t2)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sine_derivatives_by_finite_differences() {
        let f = SineField::standard(3, 2, 0.7);
        let y = [0.3, -1.1, 2.0];
        let h = 1e-6;
        let (g1, g2, g3) = (f.d1(&y), f.d2(&y), f.d3(&y));
        for a in 0..3 {
            let mut yp = y;
            let mut ym = y;
            yp[a] += h;
            ym[a] -= h;
            let (gp, gm) = (f.eval(&yp), f.eval(&ym));
            let (dp, dm) = (f.d1(&yp), f.d1(&ym));
            let (ep, em) = (f.d2(&yp), f.d2(&ym));
            for r in 0..6 {
                assert!(((gp[r] - gm[r]) / (2.0 * h) - g1[r * 3 + a]).abs() < 1e-8);
                for b in 0..3 {
                    assert!(((dp[r * 3 + b] - dm[r * 3 + b]) / (2.0 * h) - g2[(r * 3 + b) * 3 + a]).abs() < 1e-8);
                    for c in 0..3 {
                        let idx = (r * 3 + b) * 3 + c;
                        assert!(((ep[idx] - em[idx]) / (2.0 * h) - g3[idx * 3 + a]).abs() < 1e-8);
                    }
                }
            }
        }
        assert!((f.bound() - 0.7 * 6f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn polynomial_derivatives() {
        let p = ScalarPolynomial { coeffs: vec![1.0, 2.0, 0.0, 0.5] };
        assert_eq!(p.eval(&[2.0]), vec![1.0 + 4.0 + 4.0]);
        assert_eq!(p.d1(&[2.0]), vec![2.0 + 6.0]);
        assert_eq!(p.d2(&[2.0]), vec![6.0]);
        assert_eq!(p.d3(&[2.0]), vec![3.0]);
        assert!(p.bound().is_infinite());
        assert_eq!(ScalarPolynomial { coeffs: vec![-2.0] }.bound(), 2.0);
    }

    #[test]
    fn dyadic_partitions() {
        assert_eq!(dyadic_partition(0, 8, 2), vec![0, 2, 4, 6, 8]);
        assert_eq!(dyadic_partition(3, 6, 3), vec![3, 4, 5, 6]);
    }
}
