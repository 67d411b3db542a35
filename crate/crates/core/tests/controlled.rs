use std::sync::Arc;

use tfbm_rough::controlled::*;
use tfbm_rough::sampler::{sample_tfbm, DyadicGrid};
use tfbm_rough::signature::{KnotLift, PiecewiseLinearPath};
use tfbm_testkit::ols_slope;

fn tfbm_lift(level: u32, dim: usize, seed: u64) -> Arc<KnotLift> {
    let s = sample_tfbm(DyadicGrid::unit(level), 0.3, 1.0, dim, seed).unwrap();
    Arc::new(KnotLift::new(PiecewiseLinearPath::from_sample(&s)))
}

fn identity_path(lift: &Arc<KnotLift>) -> ControlledPath {
    let m = lift.dim();
    let n = lift.knots();
    let mut id = vec![0.0; m * m];
    for i in 0..m {
        id[i * m + i] = 1.0;
    }
    let y = (0..n).map(|k| lift.path().knot(k).to_vec()).collect();
    ControlledPath::new(lift.clone(), m, y, vec![id; n], vec![vec![0.0; m * m * m]; n]).unwrap()
}

fn constant_path(lift: &Arc<KnotLift>, c: &[f64]) -> ControlledPath {
    let m = lift.dim();
    let n = lift.knots();
    let d = c.len();
    ControlledPath::new(lift.clone(), d, vec![c.to_vec(); n], vec![vec![0.0; d * m]; n], vec![vec![0.0; d * m * m]; n]).unwrap()
}

// y_t = X²_{0,t} flattened, with y′_t(e_c)_{(a,b)} = x^a_{0,t} δ_{bc} and y″(e_j⊗e_k)_{(a,b)} = δ_{aj} δ_{bk}
fn area_path(lift: &Arc<KnotLift>) -> ControlledPath {
    let m = lift.dim();
    let n = lift.knots();
    let d = m * m;
    let mut y = Vec::new();
    let mut y1 = Vec::new();
    let mut y2 = Vec::new();
    for t in 0..n {
        let s = lift.between(0, t);
        y.push(s.level2.clone());
        let mut p = vec![0.0; d * m];
        let mut q = vec![0.0; d * m * m];
        for a in 0..m {
            for b in 0..m {
                p[(a * m + b) * m + b] = s.level1[a];
                q[((a * m + b) * m + a) * m + b] = 1.0;
            }
        }
        y1.push(p);
        y2.push(q);
    }
    ControlledPath::new(lift.clone(), d, y, y1, y2).unwrap()
}

#[test]
fn remainder_examples() {
    let lift = tfbm_lift(5, 2, 3);
    let c = constant_path(&lift, &[1.0, -2.0, 0.5]);
    let (a, b) = c.remainders(0.25, 0.75).unwrap();
    assert!(a.iter().chain(&b).all(|&v| v == 0.0));
    let x = identity_path(&lift);
    let (a, b) = x.remainders_at(3, 29);
    assert!(a.iter().chain(&b).all(|&v| v.abs() < 1e-15));
    let area = area_path(&lift);
    let (a, b) = area.remainders_at(5, 20);
    assert!(a.iter().chain(&b).all(|&v| v.abs() < 1e-13));
    assert!(c.remainders(0.1, 0.5).is_err());
}

#[test]
fn remainder_spot_value_on_two_knots() {
    // x: (0,0) → (1,2), so x = (1,2), X² = x⊗x/2
    let lift = Arc::new(KnotLift::new(PiecewiseLinearPath::new(vec![0.0, 1.0], vec![0.0, 0.0, 1.0, 2.0], 2).unwrap()));
    let y = vec![vec![1.0], vec![4.0]];
    let y1 = vec![vec![0.5, -1.0], vec![2.0, 0.0]];
    let y2 = vec![vec![1.0, 0.0, 2.0, 3.0], vec![0.0; 4]];
    let cp = ControlledPath::new(lift, 1, y, y1, y2).unwrap();
    let (rs, rss) = cp.remainders_at(0, 1);
    // y′x = 0.5 − 2 = −1.5; y″X² = (1·1 + 0·2 + 2·2 + 3·4)/2 = 8.5; R♯ = 3 + 1.5 − 8.5
    assert!((rs[0] + 4.0).abs() < 1e-15);
    // (y″x)_k = Σ_j y″[j][k] x^j: k=0 → 1 + 4 = 5, k=1 → 0 + 6 = 6
    assert!((rss[0] - (1.5 - 5.0)).abs() < 1e-15);
    assert!((rss[1] - (1.0 - 6.0)).abs() < 1e-15);
}

#[test]
fn compose_examples() {
    let lift = Arc::new(KnotLift::new(PiecewiseLinearPath::new(vec![0.0, 1.0], vec![0.0, 0.3], 1).unwrap()));
    let g = ConstantField { d: 1, m: 1, sigma: vec![2.0] };
    let cp = ControlledPath::new(lift.clone(), 1, vec![vec![2.0]; 2], vec![vec![4.0]; 2], vec![vec![16.0]; 2]).unwrap();
    let z = compose_smooth(&g, &cp).unwrap();
    assert_eq!((z.y1[0][0], z.y2[0][0]), (0.0, 0.0));

    let id = ScalarPolynomial::linear(1.0);
    let cp = ControlledPath::new(lift.clone(), 1, vec![vec![1.7]; 2], vec![vec![1.7]; 2], vec![vec![1.7]; 2]).unwrap();
    let z = compose_smooth(&id, &cp).unwrap();
    assert_eq!((z.y[0][0], z.y1[0][0], z.y2[0][0]), (1.7, 1.7, 1.7));

    let sq = ScalarPolynomial { coeffs: vec![0.0, 0.0, 1.0] };
    let cp = ControlledPath::new(lift, 1, vec![vec![2.0]; 2], vec![vec![4.0]; 2], vec![vec![16.0]; 2]).unwrap();
    let z = compose_smooth(&sq, &cp).unwrap();
    assert_eq!(z.y1[0][0], 16.0);
    assert_eq!(z.y2[0][0], 96.0);
}

#[test]
fn compose_matches_flow_expansion() {
    // for the flow of dy = g(y)dx along a short segment, g(y_t) − g(y_s) ≈ [g(y)]′x + [g(y)]″X²
    let f = SineField::standard(2, 2, 0.8);
    let y0 = vec![0.4, -0.2];
    let g = f.eval(&y0);
    let dg = f.d1(&y0);
    // y′ = g, y″(e_j⊗e_k) = Dg[g e_j] e_k
    let mut y2 = vec![0.0; 8];
    for i in 0..2 {
        for j in 0..2 {
            for k in 0..2 {
                y2[(i * 2 + j) * 2 + k] = (0..2).map(|l| dg[(i * 2 + k) * 2 + l] * g[l * 2 + j]).sum();
            }
        }
    }
    let lift = Arc::new(KnotLift::new(PiecewiseLinearPath::new(vec![0.0, 1.0], vec![0.0; 4], 2).unwrap()));
    let cp = ControlledPath::new(lift, 2, vec![y0.clone(); 2], vec![g.clone(); 2], vec![y2.clone(); 2]).unwrap();
    let z = compose_smooth(&f, &cp).unwrap();
    // integrate the ODE y' = g(y)v for a direction v and small time h by many Euler substeps
    let v = [0.6, -0.9];
    for &h in &[1e-2, 5e-3] {
        let steps = 20000;
        let mut y = y0.clone();
        for _ in 0..steps {
            let gy = f.eval(&y);
            let dy: Vec<f64> = (0..2).map(|i| (0..2).map(|j| gy[i * 2 + j] * v[j]).sum::<f64>() * h / steps as f64).collect();
            let mid: Vec<f64> = y.iter().zip(&dy).map(|(a, b)| a + 0.5 * b).collect();
            let gm = f.eval(&mid);
            for i in 0..2 {
                y[i] += (0..2).map(|j| gm[i * 2 + j] * v[j]).sum::<f64>() * h / steps as f64;
            }
        }
        let gy = f.eval(&y);
        let x = [v[0] * h, v[1] * h];
        for r in 0..4 {
            let mut pred = 0.0;
            for a in 0..2 {
                pred += z.y1[0][r * 2 + a] * x[a];
                for b in 0..2 {
                    pred += z.y2[0][(r * 2 + a) * 2 + b] * x[a] * x[b] / 2.0;
                }
            }
            let err = (gy[r] - z.y[0][r] - pred).abs();
            assert!(err < 2.0 * h * h * h, "h={h} r={r} err={err}");
        }
    }
}

#[test]
fn integral_examples() {
    let lift = tfbm_lift(6, 2, 9);
    let c = constant_path(&lift, &[1.5, -0.5]);
    let r = rough_integral(&c, 0, 64, DEFAULT_INTEGRAL_TOL).unwrap();
    let x = lift.between(0, 64).level1;
    for i in 0..2 {
        for l in 0..2 {
            assert!((r.value[i * 2 + l] - [1.5, -0.5][i] * x[l]).abs() < 1e-14);
        }
    }
    // starting at 0 with x_0 = 0: ∫ x ⊗ dx = X²
    let id = identity_path(&lift);
    let r = rough_integral(&id, 0, 64, DEFAULT_INTEGRAL_TOL).unwrap();
    let x2 = lift.between(0, 64).level2;
    for k in 0..4 {
        assert!((r.value[k] - x2[k]).abs() < 1e-13);
    }
    let area = area_path(&lift);
    let r = rough_integral(&area, 0, 64, DEFAULT_INTEGRAL_TOL).unwrap();
    let x3 = lift.between(0, 64).level3;
    for k in 0..8 {
        assert!((r.value[k] - x3[k]).abs() < 1e-13);
    }
    assert!(r.converged);
}

#[test]
fn scalar_polynomial_integrals_match_antiderivatives() {
    let lift = tfbm_lift(10, 1, 4);
    let n = lift.knots();
    let x: Vec<f64> = (0..n).map(|k| lift.path().knot(k)[0]).collect();
    // y = x², y′ = 2x, y″ = 2 → ∫ y dx = x³/3
    let cp = ControlledPath::new(lift.clone(), 1, x.iter().map(|v| vec![v * v]).collect(), x.iter().map(|v| vec![2.0 * v]).collect(), vec![vec![2.0]; n]).unwrap();
    for &(s, t) in &[(0usize, 1024usize), (100, 700)] {
        let r = rough_integral(&cp, s, t, DEFAULT_INTEGRAL_TOL).unwrap();
        let exact = (x[t].powi(3) - x[s].powi(3)) / 3.0;
        assert!((r.value[0] - exact).abs() <= 1e-8);
    }
}

#[test]
fn integral_additivity() {
    let lift = tfbm_lift(8, 2, 21);
    let cp = area_path(&lift);
    let whole = rough_integral(&cp, 0, 256, DEFAULT_INTEGRAL_TOL).unwrap();
    let a = rough_integral(&cp, 0, 96, DEFAULT_INTEGRAL_TOL).unwrap();
    let b = rough_integral(&cp, 96, 256, DEFAULT_INTEGRAL_TOL).unwrap();
    let tol = 2.0 * (whole.cauchy_increment + a.cauchy_increment + b.cauchy_increment) + 1e-13;
    for k in 0..8 {
        assert!((a.value[k] + b.value[k] - whole.value[k]).abs() <= tol);
    }
}

#[test]
fn compensated_sum_order_on_smooth_data() {
    let n = 1 << 14;
    let times: Vec<f64> = (0..=n).map(|k| k as f64 / n as f64).collect();
    let vals: Vec<f64> = times.iter().map(|t| (3.0 * t).sin() + t).collect();
    let lift = Arc::new(KnotLift::new(PiecewiseLinearPath::new(times, vals.clone(), 1).unwrap()));
    let cp = ControlledPath::new(
        lift,
        1,
        vals.iter().map(|v| vec![v.sin()]).collect(),
        vals.iter().map(|v| vec![v.cos()]).collect(),
        vals.iter().map(|v| vec![-v.sin()]).collect(),
    )
    .unwrap();
    let exact = vals[0].cos() - vals[n].cos();
    let mut logs = Vec::new();
    let mut ks = Vec::new();
    for r in 2..=8 {
        let err = (compensated_sum(&cp, &dyadic_partition(0, n, r))[0] - exact).abs();
        logs.push(err.log2());
        ks.push(r as f64);
    }
    // error ∝ mesh^{4α−1} with α = 1 for smooth data
    let slope = -ols_slope(&ks, &logs);
    assert!((slope - 3.0).abs() <= 0.3, "slope {slope}");
    for w in logs.windows(2) {
        assert!(((w[0] - w[1]) - 3.0).abs() <= 0.3);
    }
}

fn backward_dp(n: usize, cost: impl Fn(usize, usize) -> f64, q: f64) -> f64 {
    let mut best = vec![0.0f64; n];
    for i in (0..n - 1).rev() {
        best[i] = (i + 1..n).map(|j| cost(i, j).powf(q) + best[j]).fold(0.0, f64::max);
    }
    best[0].powf(1.0 / q)
}

#[test]
fn controlled_norm_examples() {
    let lift = tfbm_lift(6, 2, 17);
    assert_eq!(controlled_norm(&constant_path(&lift, &[1.0]), 0, 64, 3.5).unwrap(), 0.0);
    let zero = Arc::new(KnotLift::new(PiecewiseLinearPath::new((0..9).map(|k| k as f64 / 8.0).collect(), vec![0.0; 18], 2).unwrap()));
    assert_eq!(controlled_norm(&identity_path(&zero), 0, 8, 3.5).unwrap(), 0.0);

    // a genuinely remaindered path: y = sin applied componentwise to x, with y″ = 0
    let n = lift.knots();
    let y: Vec<Vec<f64>> = (0..n).map(|k| lift.path().knot(k).iter().map(|v| v.sin()).collect()).collect();
    let y1: Vec<Vec<f64>> = (0..n)
        .map(|k| {
            let x = lift.path().knot(k);
            vec![x[0].cos(), 0.0, 0.0, x[1].cos()]
        })
        .collect();
    let y2: Vec<Vec<f64>> = (0..n)
        .map(|k| {
            let x = lift.path().knot(k);
            let mut v = vec![0.0; 8];
            v[0] = -x[0].sin();
            v[7] = -x[1].sin();
            v
        })
        .collect();
    let cp = ControlledPath::new(lift.clone(), 2, y, y1, y2).unwrap();
    let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let oracle = backward_dp(n, |i, j| dist(&cp.y2[j], &cp.y2[i]), 3.5)
        + backward_dp(n, |i, j| norm(&cp.remainders_at(i, j).0), 3.5 / 3.0)
        + backward_dp(n, |i, j| norm(&cp.remainders_at(i, j).1), 3.5 / 2.0);
    let v = controlled_norm(&cp, 0, 64, 3.5).unwrap();
    assert!((v - oracle).abs() <= 1e-12 * oracle, "{v} vs {oracle}");
    assert!(controlled_norm_holder(&cp, 0, 64, 0.28).unwrap() > 0.0);
}
