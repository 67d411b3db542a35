use tfbm_rough::bessel::{tfbm_covariance, variance_function};
use tfbm_rough::sampler::*;
use tfbm_testkit::{ols_slope, tempering_coefficient_integral};

fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let v = x.iter().map(|a| (a - m) * (a - m)).sum::<f64>() / (n - 1.0);
    (m, v)
}

#[test]
fn deterministic_in_seed() {
    let g = DyadicGrid::unit(5);
    let a = sample_tfbm(g, 0.3, 1.0, 3, 99).unwrap();
    let b = sample_tfbm(g, 0.3, 1.0, 3, 99).unwrap();
    assert_eq!(a.values, b.values);
    let c = sample_tfbm(g, 0.3, 1.0, 3, 100).unwrap();
    assert_ne!(a.values, c.values);
    assert!(a.row(0).iter().all(|&v| v == 0.0));
}

#[test]
fn components_use_distinct_streams() {
    let s = sample_tfbm(DyadicGrid::unit(4), 0.3, 1.0, 2, 5).unwrap();
    let col0: Vec<f64> = (0..s.rows()).map(|k| s.row(k)[0]).collect();
    let col1: Vec<f64> = (0..s.rows()).map(|k| s.row(k)[1]).collect();
    assert_ne!(col0, col1);
    // component 0 of a d=2 sample is the d=1 sample
    let single = sample_tfbm(DyadicGrid::unit(4), 0.3, 1.0, 1, 5).unwrap();
    assert_eq!(single.values, col0);
}

#[test]
fn level_three_matrix_against_integral_form() {
    let g = DyadicGrid::unit(3);
    let c = covariance_matrix(&g, 0.3, 1.0).unwrap();
    let v = |t: f64| if t == 0.0 { 0.0 } else { tempering_coefficient_integral(0.3, 1.0, t) * t.powf(0.6) };
    for i in 0..8 {
        for j in 0..8 {
            let (s, t) = (g.time(i + 1), g.time(j + 1));
            let expected = 0.5 * (v(s) + v(t) - v((t - s).abs()));
            assert!((c[(i, j)] - expected).abs() <= 1e-8 * expected.abs(), "({i},{j})");
            assert_eq!(c[(i, j)], c[(j, i)]);
        }
    }
}

#[test]
fn monte_carlo_moments_level_six() {
    let g = DyadicGrid::unit(6);
    let f = CovarianceFactor::new(g, 0.3, 1.0).unwrap();
    let reps = f.sample_replicas(2, 2024, 0, 10_000).unwrap();
    let n = reps.len() as f64;

    // Var(B_1)
    let end: Vec<f64> = reps.iter().map(|s| s.row(64)[0]).collect();
    let sq: Vec<f64> = end.iter().map(|x| x * x).collect();
    let (m, v) = mean_var(&sq);
    let target = variance_function(0.3, 1.0, 1.0).unwrap();
    assert!((m - target).abs() <= 3.0 * (v / n).sqrt(), "{m} vs {target}");

    // stationary increments
    for &(a, b) in &[(10usize, 30usize), (0, 5), (40, 64)] {
        let sq: Vec<f64> = reps.iter().map(|s| (s.row(b)[1] - s.row(a)[1]).powi(2)).collect();
        let (m, v) = mean_var(&sq);
        let target = variance_function(0.3, 1.0, (b - a) as f64 / 64.0).unwrap();
        assert!((m - target).abs() <= 3.0 * (v / n).sqrt(), "({a},{b})");
    }

    // cross-component covariance
    for &(a, b) in &[(64usize, 64usize), (16, 48), (32, 8)] {
        let prod: Vec<f64> = reps.iter().map(|s| s.row(a)[0] * s.row(b)[1]).collect();
        let (m, v) = mean_var(&prod);
        assert!(m.abs() <= 3.0 * (v / n).sqrt(), "({a},{b})");
    }

    // one off-diagonal entry of the covariance
    let prod: Vec<f64> = reps.iter().map(|s| s.row(16)[0] * s.row(48)[0]).collect();
    let (m, v) = mean_var(&prod);
    let target = tfbm_covariance(0.3, 1.0, 0.25, 0.75).unwrap();
    assert!((m - target).abs() <= 3.0 * (v / n).sqrt());
}

#[test]
fn cholesky_succeeds_up_to_level_ten() {
    for &h in &[0.26, 0.30, 0.33] {
        for &l in &[0.5, 1.0, 2.0] {
            let f = CovarianceFactor::new(DyadicGrid::unit(10), h, l).unwrap();
            assert_eq!(f.lower().nrows(), 1024);
        }
    }
}

#[test]
fn increment_covariance_decay() {
    let a = increment_covariance(0.3, 1.0, 8, 10, 11).unwrap().abs();
    let b = increment_covariance(0.3, 1.0, 8, 10, 12).unwrap().abs();
    assert!(b < a);
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for gap in 2..=64u64 {
        let v = increment_covariance(0.3, 1.0, 8, 100 + gap, 100).unwrap();
        xs.push((gap as f64).ln());
        ys.push(v.abs().ln());
    }
    let slope = ols_slope(&xs, &ys);
    assert!((slope + 1.4).abs() <= 0.2, "slope {slope}");
}

#[test]
fn csv_and_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    let s = sample_tfbm(DyadicGrid::unit(2), 0.3, 1.0, 2, 1).unwrap();
    s.write_csv(&dir.path().join("s.csv")).unwrap();
    s.write_sidecar(&dir.path().join("s.json")).unwrap();
    let text = std::fs::read_to_string(dir.path().join("s.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "t,comp_0,comp_1");
    assert_eq!(lines.len(), 6);
    assert_eq!(lines[1], "0,0,0");
    let meta: SampleMetadata = serde_json::from_str(&std::fs::read_to_string(dir.path().join("s.json")).unwrap()).unwrap();
    assert_eq!(meta.level, 2);
    assert_eq!(meta.seed, 1);
}
