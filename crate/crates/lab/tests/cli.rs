use std::collections::BTreeMap;
use std::process::Command;

use tfbm_lab::config::{parse_config_text, DriftKind, ExperimentConfig, FieldKind};
use tfbm_lab::experiments::*;
use tfbm_lab::LabError;
use tfbm_rough::norms::dp_proxy;
use tfbm_rough::sampler::{CovarianceFactor, DyadicGrid};
use tfbm_rough::signature::SignatureTable;

fn lab(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_tfbm-lab")).args(args).output().unwrap()
}

fn map(pairs: &[(&str, &str)]) -> BTreeMap<String, String> {
    pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
}

#[test]
fn flags_override_file_entries() {
    let file = parse_config_text("# comment\nhurst = 0.28\nm_min = 5\nreplicas=300 # inline\n").unwrap();
    let flags = map(&[("hurst", "0.31")]);
    let cfg = ExperimentConfig::resolve(&file, &flags).unwrap();
    assert_eq!(cfg.hurst, 0.31);
    assert_eq!(cfg.m_min, 5);
    assert_eq!(cfg.replicas, 300);
    assert_eq!(cfg.lambda, 1.0);
    assert!(matches!(parse_config_text("colour = red"), Err(LabError::Config(_))));
    assert!(matches!(parse_config_text("hurst 0.3"), Err(LabError::Config(_))));
    assert!(ExperimentConfig::resolve(&map(&[("dim", "two")]), &BTreeMap::new()).is_err());
}

#[test]
fn config_file_through_the_binary() {
    let dir = tempfile::tempdir().unwrap();
    let conf = dir.path().join("run.conf");
    std::fs::write(&conf, "level = 4\nseed = 3\ndim = 1\n").unwrap();
    let out = dir.path().join("out");
    let o = lab(&["sample", "--config", conf.to_str().unwrap(), "--dim", "2", "--out", out.to_str().unwrap()]);
    assert!(o.status.success());
    let text = std::fs::read_to_string(out.join("sample_0.csv")).unwrap();
    assert!(text.starts_with("t,comp_0,comp_1\n"));
    assert_eq!(text.lines().count(), 18);
    let manifest: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("sample_manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "sample");
    assert_eq!(manifest["config"]["seed"], 3);
    assert_eq!(manifest["config"]["dim"], 2);
    assert!(manifest["outputs"].as_array().unwrap().len() == 2);
    assert!(manifest["library_version"].is_string());
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    // summability fails: 0.28 * 3.5 < 1.02
    let o = lab(&["cauchy", "--hurst", "0.28", "--out", out]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("summability"));
    let o = lab(&["decay", "--replicas", "50", "--out", out]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("100"));
    let o = lab(&["decay", "--dim", "1", "--replicas", "100", "--out", out]);
    assert_eq!(o.status.code(), Some(2));
    let o = lab(&["sample", "--hurst", "abc", "--out", out]);
    assert_eq!(o.status.code(), Some(2));
    let fresh = dir.path().join("never");
    let o = lab(&["decay", "--replicas", "10", "--out", fresh.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!fresh.exists());
    // a linear field with a huge amplitude overflows the divergence cap
    let o = lab(&["solve", "--field", "linear", "--amplitude", "40", "--level", "6", "--out", out]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn rate_experiments_reject_small_configs() {
    let cfg = ExperimentConfig { replicas: 99, ..Default::default() };
    assert!(run_decay(&cfg).is_err());
    assert!(run_cauchy(&ExperimentConfig { hurst: 0.4, ..cfg.clone() }).is_err());
    let beta = ExperimentConfig { hurst: 0.4, replicas: 100, beta: 0.5, ..Default::default() };
    assert!(beta.beta_limit() < 0.5);
    assert!(run_cauchy(&beta).is_err());
}

#[test]
fn cauchy_value_matches_recomputation() {
    let cfg = ExperimentConfig { hurst: 0.4, level: 7, n_max: 5, ..Default::default() };
    let s = CovarianceFactor::new(DyadicGrid::unit(7), 0.4, 1.0).unwrap().sample(2, 9, 0).unwrap();
    let v = cauchy_value(&s, 4, &cfg).unwrap();
    let a = SignatureTable::from_sample(&s, 4, 5).unwrap();
    let b = SignatureTable::from_sample(&s, 5, 5).unwrap();
    assert_eq!(v, dp_proxy(&a, &b, cfg.p, cfg.weight, 5).unwrap());
    assert!(v > 0.0);
    // identical tables have zero distance
    assert_eq!(dp_proxy(&a, &a, cfg.p, cfg.weight, 5).unwrap(), 0.0);
}

#[test]
fn cauchy_rows() {
    let cfg = ExperimentConfig { hurst: 0.4, level: 7, m_min: 3, m_max: 5, n_max: 4, replicas: 100, ..Default::default() };
    let rows = run_cauchy(&cfg).unwrap();
    assert_eq!(rows.iter().map(|r| r.m).collect::<Vec<_>>(), vec![3, 4, 5]);
    for r in &rows {
        assert!(r.median > 0.0 && r.se > 0.0);
        assert_eq!(r.threshold, 2f64.powf(-(r.m as f64) * cfg.beta));
        assert!((0.0..=1.0).contains(&r.fraction_below));
    }
}

#[test]
fn covariance_report_structure() {
    let cfg = ExperimentConfig { level: 3, replicas: 2000, ..Default::default() };
    let report = run_covariance(&cfg).unwrap();
    assert_eq!(report.entries.len(), 9 * 10 / 2);
    assert_eq!(report.samples, 4000);
    let origin = report.entry(0, 5).unwrap();
    assert_eq!((origin.theory, origin.empirical, origin.z), (0.0, 0.0, 0.0));
    let diag = report.entry(8, 8).unwrap();
    assert!((diag.empirical - diag.theory).abs() <= 5.0 * diag.se);
    assert!(report.max_abs_z < 5.0);
}

#[test]
fn decay_report_small_run() {
    let cfg = ExperimentConfig { level: 7, m_min: 4, m_max: 6, replicas: 100, ..Default::default() };
    let report = run_decay(&cfg).unwrap();
    assert!(report.level_one_exact_zero);
    assert_eq!(report.rows.len(), 9);
    assert!(report.rows.iter().filter(|r| r.j == 1).all(|r| r.moment_l2 == 0.0));
    assert!(report.rows.iter().filter(|r| r.j > 1).all(|r| r.moment_l2 > 0.0 && r.moment_lq > 0.0));
    let s = report.slope(2, "L2").unwrap();
    assert_eq!(s.expected, expected_decay_slope(0.3, 2));
    assert!(s.ci_half_width > 0.0);
    assert!(report.slope(1, "L2").is_none());
}

#[test]
fn constant_field_refinement_is_exact() {
    // the solution is a fixed linear function of the driver values, which refinement keeps
    let cfg = ExperimentConfig { field: FieldKind::Constant, level: 8, m_min: 3, m_max: 6, replicas: 4, ..Default::default() };
    for row in run_rde_refinement(&cfg).unwrap() {
        assert!(row.median_distance <= 1e-12, "m = {}: {}", row.m, row.median_distance);
        assert!(row.median_closed_form_error.is_none());
    }
}

#[test]
fn linear_field_closed_form_column() {
    let cfg = ExperimentConfig { field: FieldKind::Linear, amplitude: 0.5, level: 8, m_min: 3, m_max: 5, replicas: 4, substeps: 3, ..Default::default() };
    let rows = run_rde_refinement(&cfg).unwrap();
    for r in &rows {
        assert!(r.median_closed_form_error.unwrap() <= 1e-3);
    }
    let with_drift = ExperimentConfig { drift: DriftKind::Relax, ..cfg };
    assert!(run_rde_refinement(&with_drift).unwrap().iter().all(|r| r.median_closed_form_error.is_none()));
}

#[test]
fn solve_writes_solution_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = lab(&["solve", "--level", "6", "--amplitude", "0.025", "--out", out]);
    assert!(o.status.success());
    let report = std::fs::read_to_string(dir.path().join("report.txt")).unwrap();
    assert!(report.contains("status = valid"));
    let sol = std::fs::read_to_string(dir.path().join("solution.csv")).unwrap();
    assert!(sol.starts_with("t,y_0,y_1\n"));
    assert_eq!(sol.lines().count(), 66);
}

#[test]
fn svg_and_csv_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = lab(&["decay", "--replicas", "100", "--level", "7", "--m-max", "6", "--svg", "--out", out]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let svg = std::fs::read_to_string(dir.path().join("decay.svg")).unwrap();
    assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
    let table = std::fs::read_to_string(dir.path().join("decay.csv")).unwrap();
    assert!(table.starts_with("j,m,n,moment_l2,se_l2,moment_lq,se_lq\n"));
    let slopes = std::fs::read_to_string(dir.path().join("decay_slopes.csv")).unwrap();
    assert_eq!(slopes.lines().count(), 5);

    let o = lab(&["lift", "--level", "4", "--depth", "13", "--out", out]);
    assert_eq!(o.status.code(), Some(2));
    let o = lab(&["lift", "--level", "4", "--depth", "2", "--replicas", "2", "--out", out]);
    assert!(o.status.success());
    assert!(dir.path().join("lift_1.csv").exists());
}
