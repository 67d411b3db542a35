use proptest::prelude::*;
use tfbm_rough::norms::*;
use tfbm_rough::sampler::{sample_tfbm, CovarianceFactor, DyadicGrid};
use tfbm_rough::signature::{KnotLift, PiecewiseLinearPath, SignatureTable};
use tfbm_testkit::{brute_force_variation, naive_holder, SplitMix};

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

#[test]
fn dp_equals_enumeration_on_random_paths() {
    let mut rng = SplitMix(42);
    for case in 0..200 {
        let n = 2 + case % 11;
        let d = 1 + case % 3;
        let pts: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| rng.normal()).collect()).collect();
        for &q in &[1.0, 2.0, 2.5, 3.5] {
            let cost = |i: usize, j: usize| dist(&pts[j], &pts[i]);
            let dp = p_variation(n, cost, q).unwrap();
            let bf = brute_force_variation(n, cost, q);
            assert_eq!(dp, bf, "case {case} q {q}");
        }
    }
}

#[test]
fn two_param_matches_enumeration() {
    let mut rng = SplitMix(8);
    let table: Vec<Vec<f64>> = (0..10).map(|_| (0..10).map(|_| rng.normal().abs()).collect()).collect();
    let dp = two_param_variation(10, |i, j| table[i][j], 1.75).unwrap();
    assert_eq!(dp, brute_force_variation(10, |i, j| table[i][j], 1.75));
}

#[test]
fn holder_matches_double_loop() {
    let mut rng = SplitMix(2);
    let times: Vec<f64> = (0..30).map(|i| i as f64 / 29.0).collect();
    let vals: Vec<Vec<f64>> = (0..30).map(|_| vec![rng.normal(), rng.normal()]).collect();
    let h = holder_norm(&times, |i, j| dist(&vals[j], &vals[i]), 0.3).unwrap();
    assert_eq!(h, naive_holder(&times, &vals, 0.3));
}

#[test]
fn linear_segment_rough_norm() {
    let t: Vec<f64> = (0..9).map(|i| i as f64 / 8.0).collect();
    let path = PiecewiseLinearPath::new(t.clone(), t.clone(), 1).unwrap();
    let norms = PairNorms::from_lift(&KnotLift::new(path));
    let r = rough_pvar_norm(&norms, 0, 8, 3.0).unwrap();
    let expected = (1.0 + 0.5f64.powf(1.5) + 1.0 / 6.0).powf(1.0 / 3.0);
    assert!((r - expected).abs() < 1e-14);
    let zero = PiecewiseLinearPath::new(t.clone(), vec![0.0; 9], 1).unwrap();
    assert_eq!(rough_pvar_norm(&PairNorms::from_lift(&KnotLift::new(zero)), 0, 8, 3.0).unwrap(), 0.0);
}

fn tfbm_norms(level: u32, dim: usize, seed: u64) -> (PairNorms, KnotLift) {
    let s = sample_tfbm(DyadicGrid::unit(level), 0.3, 1.0, dim, seed).unwrap();
    let lift = KnotLift::new(PiecewiseLinearPath::from_sample(&s));
    (PairNorms::from_lift(&lift), lift)
}

#[test]
fn control_superadditive_on_grid_triples() {
    let (norms, _) = tfbm_norms(4, 2, 5);
    let n = norms.points();
    for s in 0..n {
        let row_s = norms.pvar_control_profile(s, n - 1, 3.5);
        for u in s..n {
            let row_u = norms.pvar_control_profile(u, n - 1, 3.5);
            for t in u..n {
                assert!(row_s[u] + row_u[t] <= row_s[t] * (1.0 + 1e-12) + 1e-300, "({s},{u},{t})");
            }
        }
        // sub-interval norms never exceed the whole
        assert!(rough_pvar_norm(&norms, s, n - 1, 3.5).unwrap() <= rough_pvar_norm(&norms, 0, n - 1, 3.5).unwrap() + 1e-15);
    }
}

#[test]
fn greedy_linear_path_splits_in_two() {
    let t: Vec<f64> = (0..65).map(|i| i as f64 / 64.0).collect();
    let path = PiecewiseLinearPath::new(t.clone(), t.clone(), 1).unwrap();
    let norms = PairNorms::from_lift(&KnotLift::new(path));
    // scalar 1-variation of a linear path over [s,t] is t − s
    let g = greedy_times(|i, j| p_variation(65, |a, b| if a >= i && b <= j { t[b] - t[a] } else { 0.0 }, 1.0).unwrap(), 0.5 + 1e-9, 0, 64, &t, 1.0).unwrap();
    assert_eq!(g.count(), 2);
    assert_eq!(g.indices[1], 33);
    let whole = rough_pvar_norm(&norms, 0, 64, 3.5).unwrap();
    let gp = greedy_times_pvar(&norms, 0.0 + whole, 0, 64, 3.5).unwrap();
    assert_eq!(gp.count(), 1);
}

#[test]
fn greedy_bounds_on_tfbm_lifts() {
    let f = CovarianceFactor::new(DyadicGrid::unit(8), 0.3, 1.0).unwrap();
    for r in 0..10u64 {
        let s = f.sample(2, 31, r).unwrap();
        let norms = PairNorms::from_lift(&KnotLift::new(PiecewiseLinearPath::from_sample(&s)));
        for &gamma in &[0.25, 0.5, 1.0] {
            let g = greedy_times_pvar(&norms, gamma, 0, 256, 3.5).unwrap();
            assert!(g.count() as f64 <= pvar_greedy_bound(&norms, gamma, 0, 256, 3.5).unwrap());
            // interior intervals reach the threshold, the last one may not exceed it by more than a step
            for w in g.indices.windows(2).take(g.count() - 1) {
                assert!(rough_pvar_norm(&norms, w[0], w[1], 3.5).unwrap() >= gamma);
                if w[1] > w[0] + 1 {
                    assert!(rough_pvar_norm(&norms, w[0], w[1] - 1, 3.5).unwrap() < gamma);
                }
            }
            let h = greedy_times_holder(&norms, gamma, 0, 256, 0.27).unwrap();
            assert!(h.count() as f64 <= holder_greedy_bound(&norms, gamma, 0, 256, 0.27, 0.29).unwrap());
        }
    }
}

#[test]
fn holder_greedy_boundary_cases() {
    let t: Vec<f64> = (0..17).map(|i| i as f64 / 16.0).collect();
    let zero = PiecewiseLinearPath::new(t.clone(), vec![0.0; 17], 1).unwrap();
    let norms = PairNorms::from_lift(&KnotLift::new(zero));
    let g = greedy_times_holder(&norms, 1.5, 0, 16, 0.27).unwrap();
    assert_eq!(g.count(), 1);
    // |I|^{1−2α} = 1 reached exactly at max I
    let g = greedy_times_holder(&norms, 1.0, 0, 16, 0.27).unwrap();
    assert_eq!(g.count(), 1);
    assert_eq!(g.times, vec![0.0, 1.0]);
}

#[test]
fn rho_and_proxy() {
    let f = CovarianceFactor::new(DyadicGrid::unit(8), 0.3, 1.0).unwrap();
    let a = SignatureTable::from_sample(&f.sample(2, 1, 0).unwrap(), 8, 8).unwrap();
    let b = SignatureTable::from_sample(&f.sample(2, 1, 1).unwrap(), 8, 8).unwrap();
    for j in 1..=3 {
        assert_eq!(rho_j(&a, Some(&a), j, 3.5, 3.0, 8).unwrap(), 0.0);
        // direct summation in reverse order
        let q = 3.5 / j as f64;
        let mut total = 0.0;
        for n in (1..=8u32).rev() {
            for k in (1..=(1usize << n)).rev() {
                let x = a.get(n, k).unwrap().level(j);
                let y = b.get(n, k).unwrap().level(j);
                total += (n as f64).powi(3) * dist(x, y).powf(q);
            }
        }
        let oracle = total.powf(1.0 / q);
        let r = rho_j(&a, Some(&b), j, 3.5, 3.0, 8).unwrap();
        assert!((r - oracle).abs() <= 1e-12 * oracle, "j={j}");
    }
    assert_eq!(dp_proxy(&a, &a, 3.5, 3.0, 8).unwrap(), 0.0);
    let ab = dp_proxy(&a, &b, 3.5, 3.0, 8).unwrap();
    assert_eq!(ab, dp_proxy(&b, &a, 3.5, 3.0, 8).unwrap());
    // recomputation of the six terms from scratch
    let r = |x: &SignatureTable, y: Option<&SignatureTable>, j| rho_j(x, y, j, 3.5, 3.0, 8).unwrap();
    let s1 = r(&a, None, 1) + r(&b, None, 1);
    let s2 = r(&a, None, 2) + r(&b, None, 2);
    let terms = [r(&a, Some(&b), 1), r(&a, Some(&b), 2), r(&a, Some(&b), 3), r(&a, Some(&b), 1) * s1, r(&a, Some(&b), 2) * s1, r(&a, Some(&b), 1) * s2];
    assert_eq!(ab, terms.iter().cloned().fold(0.0, f64::max));
    assert!(rho_j(&a, Some(&b), 1, 3.5, 3.0, 9).is_err());
    assert!(rho_j(&a, Some(&b), 4, 3.5, 3.0, 8).is_err());
}

#[test]
fn rho_against_zero_path() {
    let s = sample_tfbm(DyadicGrid::unit(5), 0.3, 1.0, 2, 3).unwrap();
    let a = SignatureTable::from_sample(&s, 5, 5).unwrap();
    let mut z = s.clone();
    z.values.iter_mut().for_each(|v| *v = 0.0);
    let zero = SignatureTable::from_sample(&z, 5, 5).unwrap();
    for j in 1..=3 {
        assert_eq!(rho_j(&a, None, j, 3.5, 3.0, 5).unwrap(), rho_j(&a, Some(&zero), j, 3.5, 3.0, 5).unwrap());
    }
}

proptest! {
    #[test]
    fn dp_equals_enumeration(vals in proptest::collection::vec(-3.0f64..3.0, 2..12), q in 1.0f64..4.0) {
        let n = vals.len();
        let cost = |i: usize, j: usize| (vals[j] - vals[i]).abs();
        prop_assert_eq!(p_variation(n, cost, q).unwrap(), brute_force_variation(n, cost, q));
    }

    #[test]
    fn rho_nonnegative(seed in 0u64..1000) {
        let s = sample_tfbm(DyadicGrid::unit(4), 0.3, 1.0, 2, seed).unwrap();
        let a = SignatureTable::from_sample(&s, 4, 4).unwrap();
        let b = SignatureTable::from_sample(&s, 3, 4).unwrap();
        for j in 1..=3 {
            prop_assert!(rho_j(&a, Some(&b), j, 3.5, 3.0, 4).unwrap() >= 0.0);
        }
    }
}
