//! Grid-restricted p-variation and Hölder norms, the dyadic ρ_j metrics with the
//! proxy I(X, X̃), and greedy stopping-time sequences.

use rayon::prelude::*;

use crate::error::{domain, Error, Result};
use crate::signature::{KnotLift, SignatureTable};

pub const DEFAULT_P: f64 = 3.5;
pub const DEFAULT_WEIGHT_EXPONENT: f64 = 3.0;
pub const DEFAULT_N_MAX: u32 = 8;

pub(crate) fn euclid(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

/// Best partition sums over [start, j] for every j ≥ start:
/// best[j] = sup over partitions of Σ cost(t_i, t_{i+1})^q, with best[start] = 0.
pub fn variation_profile<F: Fn(usize, usize) -> f64>(points: usize, start: usize, cost: F, q: f64) -> Vec<f64> {
    let mut best = vec![0.0; points];
    for j in start + 1..points {
        let mut b = 0.0f64;
        for i in start..j {
            let c = best[i] + cost(i, j).powf(q);
            if c > b {
                b = c;
            }
        }
        best[j] = b;
    }
    best
}

/// sup over partitions of the grid of Σ cost^q (the q-variation raised to q).
pub fn variation_power<F: Fn(usize, usize) -> f64>(points: usize, cost: F, q: f64) -> Result<f64> {
    if points == 0 {
        return domain("variation over an empty grid");
    }
    if !(q > 0.0) {
        return domain(format!("variation exponent must be positive, got {q}"));
    }
    Ok(variation_profile(points, 0, cost, q)[points - 1])
}

/// q-variation of a path whose increments between grid points i < j have norm `increment(i, j)`.
pub fn p_variation<F: Fn(usize, usize) -> f64>(points: usize, increment: F, q: f64) -> Result<f64> {
    Ok(variation_power(points, increment, q)?.powf(1.0 / q))
}

/// q-variation of a two-parameter object given the norm of X_{t_i, t_j}.
pub fn two_param_variation<F: Fn(usize, usize) -> f64>(points: usize, x: F, q: f64) -> Result<f64> {
    p_variation(points, x, q)
}

/// max over grid pairs of norm(i, j) / (t_j - t_i)^exponent.
pub fn holder_norm<F: Fn(usize, usize) -> f64>(times: &[f64], norm: F, exponent: f64) -> Result<f64> {
    if !(exponent > 0.0 && exponent <= 1.0) {
        return domain(format!("Hölder exponent must lie in (0, 1], got {exponent}"));
    }
    let mut best = 0.0f64;
    for i in 0..times.len() {
        for j in i + 1..times.len() {
            best = best.max(norm(i, j) / (times[j] - times[i]).powf(exponent));
        }
    }
    Ok(best)
}

/// Norms of x, X², X³ between every pair of knots of a lifted path.
#[derive(Debug, Clone)]
pub struct PairNorms {
    times: Vec<f64>,
    levels: [Vec<f64>; 3],
}

impl PairNorms {
    pub fn from_lift(lift: &KnotLift) -> Self {
        let n = lift.knots();
        let rows: Vec<[Vec<f64>; 3]> = (0..n)
            .into_par_iter()
            .map(|i| {
                let mut r = [vec![0.0; n], vec![0.0; n], vec![0.0; n]];
                for j in i + 1..n {
                    let s = lift.between(i, j);
                    r[0][j] = euclid(&s.level1);
                    r[1][j] = euclid(&s.level2);
                    r[2][j] = euclid(&s.level3);
                }
                r
            })
            .collect();
        let mut levels = [vec![0.0; n * n], vec![0.0; n * n], vec![0.0; n * n]];
        for (i, r) in rows.into_iter().enumerate() {
            for l in 0..3 {
                levels[l][i * n..(i + 1) * n].copy_from_slice(&r[l]);
            }
        }
        Self { times: lift.times().to_vec(), levels }
    }

    pub fn points(&self) -> usize {
        self.times.len()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    /// ‖X^level_{t_i, t_j}‖ for i ≤ j.
    pub fn get(&self, level: usize, i: usize, j: usize) -> f64 {
        self.levels[level - 1][i * self.points() + j]
    }

    fn check_range(&self, a: usize, b: usize) -> Result<()> {
        if !(a < b && b < self.points()) {
            return domain(format!("knot range [{a}, {b}] invalid for {} knots", self.points()));
        }
        Ok(())
    }

    /// S_1 + S_2 + S_3 over [t_start, t_j] for every j, with S_l the (p/l)-variation power of level l.
    pub fn pvar_control_profile(&self, start: usize, end: usize, p: f64) -> Vec<f64> {
        let mut total = vec![0.0; end + 1];
        for l in 1..=3 {
            let prof = variation_profile(end + 1, start, |i, j| self.get(l, i, j), p / l as f64);
            for j in start..=end {
                total[j] += prof[j];
            }
        }
        total
    }

    // as pvar_control_profile, but stops at the first j whose total reaches `stop`
    fn pvar_control_until(&self, start: usize, end: usize, p: f64, stop: f64) -> Vec<f64> {
        let mut rows = [vec![0.0; end + 1], vec![0.0; end + 1], vec![0.0; end + 1]];
        let mut total = vec![0.0; start + 1];
        for j in start + 1..=end {
            for (l, row) in rows.iter_mut().enumerate() {
                let q = p / (l + 1) as f64;
                let mut b = 0.0f64;
                for i in start..j {
                    let c = row[i] + self.get(l + 1, i, j).powf(q);
                    if c > b {
                        b = c;
                    }
                }
                row[j] = b;
            }
            total.push(rows[0][j] + rows[1][j] + rows[2][j]);
            if total[j] >= stop {
                break;
            }
        }
        total
    }

    /// Rough α-Hölder norm ‖x‖_α + ‖X²‖_{2α} + ‖X³‖_{3α} over [t_start, t_j] for every j.
    pub fn holder_profile(&self, start: usize, end: usize, alpha: f64) -> Vec<f64> {
        let mut best = [0.0f64; 3];
        let mut out = vec![0.0; end + 1];
        for j in start + 1..=end {
            for i in start..j {
                let dt = self.times[j] - self.times[i];
                for l in 0..3 {
                    let v = self.get(l + 1, i, j) / dt.powf((l + 1) as f64 * alpha);
                    if v > best[l] {
                        best[l] = v;
                    }
                }
            }
            out[j] = best.iter().sum();
        }
        out
    }
}

/// (‖x‖^p_p + ‖X²‖^{p/2}_{p/2} + ‖X³‖^{p/3}_{p/3})^{1/p} over knots [a, b].
pub fn rough_pvar_norm(norms: &PairNorms, a: usize, b: usize, p: f64) -> Result<f64> {
    if !(p >= 1.0) {
        return domain(format!("p must be at least 1, got {p}"));
    }
    if a == b {
        return Ok(0.0);
    }
    norms.check_range(a, b)?;
    Ok(norms.pvar_control_profile(a, b, p)[b].powf(1.0 / p))
}

/// ‖x‖_α + ‖X²‖_{2α} + ‖X³‖_{3α} over knots [a, b].
pub fn rough_holder_norm(norms: &PairNorms, a: usize, b: usize, alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && 3.0 * alpha <= 3.0) {
        return domain(format!("Hölder exponent must be positive, got {alpha}"));
    }
    if a == b {
        return Ok(0.0);
    }
    norms.check_range(a, b)?;
    Ok(norms.holder_profile(a, b, alpha)[b])
}

#[derive(Debug, Clone, PartialEq)]
pub struct GreedySequence {
    pub times: Vec<f64>,
    pub indices: Vec<usize>,
    pub threshold: f64,
    /// p for the variation sequence, α for the Hölder sequence.
    pub exponent: f64,
}

impl GreedySequence {
    /// Number of intervals N.
    pub fn count(&self) -> usize {
        self.indices.len() - 1
    }
}

fn check_greedy(gamma: f64, a: usize, b: usize, times: &[f64]) -> Result<()> {
    if !(gamma > 0.0) {
        return domain(format!("greedy threshold must be positive, got {gamma}"));
    }
    if !(a < b && b < times.len()) {
        return domain(format!("greedy range [{a}, {b}] invalid for {} grid points", times.len()));
    }
    Ok(())
}

/// Greedy times for an arbitrary control on grid indices, nondecreasing in its right
/// endpoint: the next time is the first grid point where control(τ, t) ≥ γ, found by
/// bisection, or the right end of the range.
pub fn greedy_times<C: Fn(usize, usize) -> f64>(control: C, gamma: f64, a: usize, b: usize, times: &[f64], exponent: f64) -> Result<GreedySequence> {
    check_greedy(gamma, a, b, times)?;
    let mut indices = vec![a];
    let mut cur = a;
    while cur < b {
        let at_end = control(cur, b);
        let next = if at_end < gamma {
            b
        } else {
            let mut probes: Vec<(usize, f64)> = vec![(b, at_end)];
            let (mut lo, mut hi) = (cur, b);
            while hi - lo > 1 {
                let mid = lo + (hi - lo) / 2;
                let v = control(cur, mid);
                probes.push((mid, v));
                if v >= gamma {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            probes.sort_by_key(|p| p.0);
            if probes.windows(2).any(|w| w[1].1 < w[0].1) {
                return Err(Error::Contract(format!("greedy control is not monotone in its right endpoint from grid index {cur}")));
            }
            hi
        };
        indices.push(next);
        cur = next;
    }
    Ok(GreedySequence { times: indices.iter().map(|&i| times[i]).collect(), indices, threshold: gamma, exponent })
}

fn greedy_from_profiles<F: Fn(usize) -> Vec<f64>>(profile: F, gamma: f64, a: usize, b: usize, times: &[f64], exponent: f64) -> Result<GreedySequence> {
    check_greedy(gamma, a, b, times)?;
    let mut indices = vec![a];
    let mut cur = a;
    while cur < b {
        // rows may stop early, right after the threshold is reached
        let row = profile(cur);
        if row[cur..].windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::Contract(format!("greedy control is not monotone from grid index {cur}")));
        }
        let next = (cur + 1..row.len()).find(|&j| row[j] >= gamma).unwrap_or(b);
        indices.push(next);
        cur = next;
    }
    Ok(GreedySequence { times: indices.iter().map(|&i| times[i]).collect(), indices, threshold: gamma, exponent })
}

/// Greedy times for the rough p-variation norm on knots [a, b].
pub fn greedy_times_pvar(norms: &PairNorms, gamma: f64, a: usize, b: usize, p: f64) -> Result<GreedySequence> {
    // the norm reaches γ exactly when the control S_1 + S_2 + S_3 reaches γ^p
    let stop = gamma.powf(p);
    let mut seq = greedy_from_profiles(|cur| norms.pvar_control_until(cur, b, p, stop), stop, a, b, norms.times(), p)?;
    seq.threshold = gamma;
    Ok(seq)
}

/// Greedy times for (t − τ)^{1−2α} + rough α-Hölder norm on knots [a, b].
pub fn greedy_times_holder(norms: &PairNorms, gamma: f64, a: usize, b: usize, alpha: f64) -> Result<GreedySequence> {
    let times = norms.times();
    greedy_from_profiles(
        |cur| {
            // built column by column so the row can stop once γ is reached
            let mut best = [0.0f64; 3];
            let mut row = vec![0.0; cur + 1];
            for j in cur + 1..=b {
                for i in cur..j {
                    let dt = times[j] - times[i];
                    for (l, slot) in best.iter_mut().enumerate() {
                        *slot = slot.max(norms.get(l + 1, i, j) / dt.powf((l + 1) as f64 * alpha));
                    }
                }
                let v = best.iter().sum::<f64>() + (times[j] - times[cur]).powf(1.0 - 2.0 * alpha);
                row.push(v);
                if v >= gamma {
                    break;
                }
            }
            row
        },
        gamma,
        a,
        b,
        times,
        alpha,
    )
}

/// 1 + γ^{-p} ‖x‖^p_{p-var, I}.
pub fn pvar_greedy_bound(norms: &PairNorms, gamma: f64, a: usize, b: usize, p: f64) -> Result<f64> {
    Ok(1.0 + gamma.powf(-p) * rough_pvar_norm(norms, a, b, p)?.powf(p))
}

/// 1 + |I| γ^{-1/(ν−α)} (1 + ‖x‖^{1/(ν−α)}_{ν-Hol, I}).
pub fn holder_greedy_bound(norms: &PairNorms, gamma: f64, a: usize, b: usize, alpha: f64, nu: f64) -> Result<f64> {
    if !(0.25 < alpha && alpha < nu && nu < 0.5) {
        return domain(format!("need 1/4 < α < ν < 1/2, got α = {alpha}, ν = {nu}"));
    }
    let e = 1.0 / (nu - alpha);
    let len = norms.times()[b] - norms.times()[a];
    Ok(1.0 + len * gamma.powf(-e) * (1.0 + rough_holder_norm(norms, a, b, nu)?.powf(e)))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RhoMetrics {
    pub rho: [f64; 3],
    pub n_max: u32,
    pub weight_exponent: f64,
    pub p: f64,
}

fn check_tables(x: &SignatureTable, y: Option<&SignatureTable>, n_max: u32) -> Result<()> {
    if x.depth < n_max {
        return domain(format!("table depth {} below n_max = {n_max}", x.depth));
    }
    if let Some(y) = y {
        if y.depth < n_max {
            return domain(format!("table depth {} below n_max = {n_max}", y.depth));
        }
        if y.dim != x.dim {
            return domain(format!("table dimensions differ: {} vs {}", x.dim, y.dim));
        }
    }
    Ok(())
}

/// ρ_j(X, X̃) = (Σ_{n=1}^{n_max} n^γ Σ_k |X^j − X̃^j|^{p/j})^{j/p}; `None` compares with the zero path.
pub fn rho_j(x: &SignatureTable, y: Option<&SignatureTable>, j: usize, p: f64, weight_exponent: f64, n_max: u32) -> Result<f64> {
    if !(1..=3).contains(&j) {
        return domain(format!("ρ_j is defined for j = 1, 2, 3, got {j}"));
    }
    check_tables(x, y, n_max)?;
    let q = p / j as f64;
    let mut total = 0.0;
    for n in 1..=n_max {
        let xs = x.level_entries(n);
        let mut inner = 0.0;
        for (k, sx) in xs.iter().enumerate() {
            let a = sx.level(j);
            let dist = match y {
                Some(y) => {
                    let b = y.level_entries(n)[k].level(j);
                    a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum::<f64>().sqrt()
                }
                None => euclid(a),
            };
            inner += dist.powf(q);
        }
        total += (n as f64).powf(weight_exponent) * inner;
    }
    Ok(total.powf(1.0 / q))
}

pub fn rho_metrics(x: &SignatureTable, y: Option<&SignatureTable>, p: f64, weight_exponent: f64, n_max: u32) -> Result<RhoMetrics> {
    let mut rho = [0.0; 3];
    for (j, r) in rho.iter_mut().enumerate() {
        *r = rho_j(x, y, j + 1, p, weight_exponent, n_max)?;
    }
    Ok(RhoMetrics { rho, n_max, weight_exponent, p })
}

/// The six quantities whose maximum is I(X, X̃).
pub fn dp_proxy_terms(x: &SignatureTable, y: &SignatureTable, p: f64, weight_exponent: f64, n_max: u32) -> Result<[f64; 6]> {
    let d = rho_metrics(x, Some(y), p, weight_exponent, n_max)?.rho;
    let ax = rho_metrics(x, None, p, weight_exponent, n_max)?.rho;
    let ay = rho_metrics(y, None, p, weight_exponent, n_max)?.rho;
    let s1 = ax[0] + ay[0];
    let s2 = ax[1] + ay[1];
    Ok([d[0], d[1], d[2], d[0] * s1, d[1] * s1, d[0] * s2])
}

/// I(X, X̃), the computable proxy dominating the p-variation distance up to a constant.
pub fn dp_proxy(x: &SignatureTable, y: &SignatureTable, p: f64, weight_exponent: f64, n_max: u32) -> Result<f64> {
    Ok(dp_proxy_terms(x, y, p, weight_exponent, n_max)?.into_iter().fold(0.0, f64::max))
}
