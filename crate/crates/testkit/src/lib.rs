//! Reference implementations used only by tests. Nothing here shares code with
//! the library under test.

use std::f64::consts::PI;

/// Gauss-Legendre nodes and weights on [-1, 1] by Newton iteration.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n {
        let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let mut p0 = 1.0;
            let mut p1 = 0.0;
            for j in 0..n {
                let p2 = p1;
                p1 = p0;
                p0 = ((2 * j + 1) as f64 * z * p1 - j as f64 * p2) / (j + 1) as f64;
            }
            dp = n as f64 * (z * p0 - p1) / (z * z - 1.0);
            let dz = p0 / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = z;
        w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
    }
    (x, w)
}

/// Composite Gauss-Legendre over `panels` equal pieces of [a, b].
pub fn composite_gl<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, panels: usize, order: usize) -> f64 {
    let (x, w) = gauss_legendre(order);
    let h = (b - a) / panels as f64;
    let mut total = 0.0;
    for p in 0..panels {
        let lo = a + p as f64 * h;
        let c = lo + 0.5 * h;
        let mut s = 0.0;
        for i in 0..order {
            s += w[i] * f(c + 0.5 * h * x[i]);
        }
        total += 0.5 * h * s;
    }
    total
}

/// C_t^2 from the moving-average representation
/// ∫ [e^{-λt(1-x)_+}(1-x)_+^{-α} - e^{-λt(-x)_+}(-x)_+^{-α}]^2 dx, α = 1/2 - H < 1/2.
pub fn tempering_coefficient_integral(hurst: f64, lambda: f64, t: f64) -> f64 {
    let alpha = 0.5 - hurst;
    let lt = lambda * t;
    // graded panels toward an endpoint singularity of type w^{-2α}
    let graded = |f: &dyn Fn(f64) -> f64| {
        let mut total = 0.0;
        let mut hi = 1.0f64;
        for _ in 0..80 {
            let lo = 0.5 * hi;
            total += composite_gl(f, lo, hi, 1, 30);
            hi = lo;
        }
        // remaining [0, hi]: integrand ~ w^{-2α}
        total + hi.powf(1.0 - 2.0 * alpha) / (1.0 - 2.0 * alpha)
    };
    // x in (0,1), u = 1 - x
    let inner = graded(&|u: f64| (-2.0 * lt * u).exp() * u.powf(-2.0 * alpha));
    // x < 0, w = -x
    let diff_sq = |w: f64| {
        let rel = (-alpha * (1.0 / w).ln_1p() - lt).exp_m1();
        let v = (-lt * w).exp() * w.powf(-alpha) * rel;
        v * v
    };
    let near = graded(&diff_sq);
    let mut far = 0.0;
    let mut lo = 1.0;
    loop {
        let hi = 2.0 * lo;
        let piece = composite_gl(diff_sq, lo, hi, 4, 40);
        far += piece;
        if piece < 1e-20 * far && lo > 1.0 / lt.max(1e-300) {
            break;
        }
        if lo > 1e12 {
            break;
        }
        lo = hi;
    }
    inner + near + far
}

/// Trapezoid rule for K_v(z) = ∫_0^∞ e^{-z cosh x} cosh(vx) dx (spectrally accurate).
pub fn bessel_k_trapezoid(v: f64, z: f64) -> f64 {
    let h = 0.01;
    let mut s = 0.5 * (-z).exp();
    let mut k = 1;
    loop {
        let x = k as f64 * h;
        let term = (-z * x.cosh()).exp() * (v * x).cosh();
        s += term;
        if term < 1e-30 * s && x > 1.0 {
            break;
        }
        k += 1;
    }
    s * h
}

/// Sup over every subset partition of Σ cost(i, j)^q, by enumeration of all 2^{n-2} interior subsets.
pub fn brute_force_variation<F: Fn(usize, usize) -> f64>(n: usize, cost: F, q: f64) -> f64 {
    assert!(n >= 2 && n <= 20);
    let interior = n - 2;
    let mut best = 0.0f64;
    for mask in 0u32..(1u32 << interior) {
        let mut prev = 0;
        let mut sum = 0.0;
        for i in 1..n {
            let last = i == n - 1;
            if last || mask & (1 << (i - 1)) != 0 {
                sum += cost(prev, i).powf(q);
                prev = i;
            }
        }
        best = best.max(sum);
    }
    best.powf(1.0 / q)
}

/// max over i<j of |path_j - path_i| / (t_j - t_i)^a with the Euclidean norm.
pub fn naive_holder(times: &[f64], values: &[Vec<f64>], exponent: f64) -> f64 {
    let mut best = 0.0f64;
    for i in 0..times.len() {
        for j in i + 1..times.len() {
            let n: f64 = values[j]
                .iter()
                .zip(&values[i])
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            best = best.max(n / (times[j] - times[i]).powf(exponent));
        }
    }
    best
}

/// Levels of the signature of the polygon through `increments`, from the explicit
/// ordered sums over segments (no concatenation).
pub fn polygon_signature(increments: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let d = increments[0].len();
    let mut x1 = vec![0.0; d];
    let mut x2 = vec![0.0; d * d];
    let mut x3 = vec![0.0; d * d * d];
    let n = increments.len();
    for a in 0..n {
        for i in 0..d {
            x1[i] += increments[a][i];
        }
    }
    for i in 0..d {
        for j in 0..d {
            let mut s = 0.0;
            for a in 0..n {
                s += increments[a][i] * increments[a][j] / 2.0;
                for b in a + 1..n {
                    s += increments[a][i] * increments[b][j];
                }
            }
            x2[i * d + j] = s;
        }
    }
    for i in 0..d {
        for j in 0..d {
            for k in 0..d {
                let mut s = 0.0;
                for a in 0..n {
                    let da = &increments[a];
                    s += da[i] * da[j] * da[k] / 6.0;
                    for b in a + 1..n {
                        let db = &increments[b];
                        s += da[i] * da[j] * db[k] / 2.0 + da[i] * db[j] * db[k] / 2.0;
                        for c in b + 1..n {
                            s += da[i] * db[j] * increments[c][k];
                        }
                    }
                }
                x3[(i * d + j) * d + k] = s;
            }
        }
    }
    (x1, x2, x3)
}

/// Classical RK4 for y' = f(t, y) with `steps` equal steps.
pub fn rk4<F: Fn(f64, &[f64]) -> Vec<f64>>(f: F, y0: &[f64], t0: f64, t1: f64, steps: usize) -> Vec<f64> {
    let h = (t1 - t0) / steps as f64;
    let mut y = y0.to_vec();
    let axpy = |y: &[f64], k: &[f64], s: f64| -> Vec<f64> { y.iter().zip(k).map(|(a, b)| a + s * b).collect() };
    for i in 0..steps {
        let t = t0 + i as f64 * h;
        let k1 = f(t, &y);
        let k2 = f(t + h / 2.0, &axpy(&y, &k1, h / 2.0));
        let k3 = f(t + h / 2.0, &axpy(&y, &k2, h / 2.0));
        let k4 = f(t + h, &axpy(&y, &k3, h));
        for j in 0..y.len() {
            y[j] += h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
        }
    }
    y
}

/// Ordinary least squares slope of y on x.
pub fn ols_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

/// Small deterministic generator (SplitMix64) for test data that must not depend on the library's RNG plumbing.
pub struct SplitMix(pub u64);

impl SplitMix {
    pub fn next_u64(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }

    pub fn range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn normal(&mut self) -> f64 {
        let u = self.uniform().max(1e-300);
        let v = self.uniform();
        (-2.0 * u.ln()).sqrt() * (2.0 * PI * v).cos()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn legendre_integrates_polynomials() {
        let r = composite_gl(|x| x.powi(7), 0.0, 1.0, 1, 5);
        assert!((r - 0.125).abs() < 1e-15);
    }

    #[test]
    fn trapezoid_half_order() {
        let k = bessel_k_trapezoid(0.5, 1.0);
        assert!((k - (PI / 2.0).sqrt() * (-1.0f64).exp()).abs() < 1e-14);
    }

    #[test]
    fn integral_form_reference_values() {
        // high-precision values of the same integral computed with arbitrary-precision quadrature
        let cases = [
            (0.3, 1.0, 1.0, 1.50075311370125),
            (0.3, 1.0, 0.01, 1.8739947063009),
            (0.26, 2.0, 2.0, 1.148119221951792),
            (0.33, 0.5, 0.1, 1.640680626872812),
        ];
        for (h, l, t, v) in cases {
            let c = tempering_coefficient_integral(h, l, t);
            assert!((c - v).abs() / v < 1e-10, "H={h} λ={l} t={t}: {c} vs {v}");
        }
    }

    #[test]
    fn polygon_signature_one_dimensional() {
        let (x1, x2, x3) = polygon_signature(&[vec![1.0], vec![-0.5], vec![2.0]]);
        assert!((x1[0] - 2.5).abs() < 1e-15);
        assert!((x2[0] - 2.5f64.powi(2) / 2.0).abs() < 1e-14);
        assert!((x3[0] - 2.5f64.powi(3) / 6.0).abs() < 1e-14);
    }

    #[test]
    fn brute_force_monotone() {
        let v = [0.0f64, 1.0, 3.0, 4.0];
        let r = brute_force_variation(4, |i, j| (v[j] - v[i]).abs(), 2.0);
        assert!((r - 4.0).abs() < 1e-15);
    }
}
