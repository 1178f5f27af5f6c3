use std::path::Path;
use std::process::{Command as Process, Output};

use membrane_tree::export::read_binary;
use membrane_tree::extremes::lambda_n;
use membrane_tree::TreeParams;
use membrane_tree_cli::commands::greens_entries;
use membrane_tree_cli::verify::run_verify;
use membrane_tree_cli::{exit_code, run, Command, Format, Hooks, RunConfig, EXIT_ASSERTION};
use serde_json::Value;

fn bin(args: &[&str], out: &Path) -> Output {
    Process::new(env!("CARGO_BIN_EXE_membrane-tree"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn greens_table_values() {
    let rows = greens_entries(3, 5).unwrap();
    let expected = [10.0, 8.0, 5.5, 3.5, 2.125, 1.25];
    for (r, g) in rows.iter().zip(expected) {
        assert!((r.g_proof - g).abs() < 1e-12, "d={} {}", r.d, r.g_proof);
        assert!(r.abs_proof_minus_series < 1e-8);
    }
    let m4 = greens_entries(4, 0).unwrap();
    assert!((m4[0].g_proof - 3.75).abs() < 1e-12);
}

#[test]
fn greens_writes_csv_and_rejects_small_degree() {
    let dir = tempfile::tempdir().unwrap();
    let ok = bin(&["greens", "--m", "3", "--max-d", "4"], dir.path());
    assert_eq!(ok.status.code(), Some(0));
    let text = std::fs::read_to_string(dir.path().join("greens_m3.csv")).unwrap();
    assert!(text.starts_with("d,g_statement,g_proof,g_series,abs_proof_minus_series"));
    assert_eq!(text.lines().count(), 6);

    let bad = bin(&["greens", "--m", "2"], dir.path());
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn covariance_root_entries_at_depth_zero() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin(&["covariance", "--m", "3", "--n", "0"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    let s = json(&dir.path().join("covariance_summary.json"));
    assert!((s["root"]["g_n"].as_f64().unwrap() - 0.75).abs() < 1e-12);
    assert!((s["root"]["gbar"].as_f64().unwrap() - 1.0).abs() < 1e-12);
    assert!((s["root"]["e_n"].as_f64().unwrap() - 0.25).abs() < 1e-12);
    assert_eq!(s["finer_bound"]["status"], "skipped: disabled");
    for stem in ["g_n", "gbar_n", "e_n"] {
        assert!(dir.path().join(format!("{stem}.csv")).exists());
    }
}

#[test]
fn covariance_regime_gate_and_cap() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin(
        &["covariance", "--m", "3", "--n", "2", "--large-m-assertions", "on"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(0));
    let s = json(&dir.path().join("covariance_summary.json"));
    assert_eq!(s["finer_bound"]["status"], "skipped: regime");

    let capped = bin(&["covariance", "--m", "3", "--n", "12"], dir.path());
    assert_eq!(capped.status.code(), Some(3));
}

#[test]
fn covariance_large_degree_without_matrices() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin(
        &["covariance", "--m", "25", "--n", "2", "--matrices", "off", "--large-m-assertions", "on"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(0));
    let s = json(&dir.path().join("covariance_summary.json"));
    assert_eq!(s["finer_bound"]["status"], "checked");
    assert_eq!(s["finer_bound"]["violations"], 0);
    assert_eq!(s["matrices_written"], false);
    assert!(!dir.path().join("g_n.csv").exists());
}

#[test]
fn covariance_binary_matrices_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin(&["covariance", "--m", "3", "--n", "2", "--format", "binary"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    let bytes = std::fs::read(dir.path().join("g_n.bin")).unwrap();
    let g = read_binary(&mut bytes.as_slice()).unwrap();
    assert_eq!((g.rows(), g.cols()), (10, 10));
    for i in 0..10 {
        for j in 0..10 {
            assert_eq!(g.get(i, j), g.get(j, i));
        }
    }
}

#[test]
fn extremes_is_deterministic_and_reports_lambda() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let args = ["extremes", "--m", "3", "--n", "3", "--samples", "200", "--seed", "5", "--theta", "-1,0.5"];
    assert_eq!(bin(&args, a.path()).status.code(), Some(0));
    assert_eq!(bin(&args, b.path()).status.code(), Some(0));
    for f in ["extremes.json", "rescaled_maxima.csv"] {
        assert_eq!(
            std::fs::read(a.path().join(f)).unwrap(),
            std::fs::read(b.path().join(f)).unwrap()
        );
    }
    let report = json(&a.path().join("extremes.json"));
    let p = TreeParams::new(3, 3).unwrap();
    for (i, theta) in [-1.0, 0.5].into_iter().enumerate() {
        let got = report["lambda_n"][i].as_f64().unwrap();
        assert!((got - lambda_n(p, theta).unwrap()).abs() < 1e-12);
    }
}

#[test]
fn extremes_rejects_bad_input() {
    let dir = tempfile::tempdir().unwrap();
    let few = bin(&["extremes", "--samples", "50"], dir.path());
    assert_eq!(few.status.code(), Some(2));
    let law = bin(&["extremes", "--law", "bogus"], dir.path());
    assert_eq!(law.status.code(), Some(2));
}

#[test]
fn verify_passes_by_default() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = RunConfig::new(Command::Verify, 3);
    config.out = dir.path().to_path_buf();
    let (report, artifacts) = run_verify(&config, &Hooks::default()).unwrap();
    assert!(report.passed, "{:#?}", report.checks);
    assert!(artifacts.files.iter().any(|f| f.ends_with("verify.json")));
}

fn tampered(m: u32, d: u32) -> membrane_tree::Result<f64> {
    Ok(membrane_tree::greens::greens_infinite(m, d)? * 1.001)
}

#[test]
fn verify_detects_a_wrong_greens_function() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = RunConfig::new(Command::Verify, 3);
    config.out = dir.path().to_path_buf();
    let hooks = Hooks { greens: tampered };
    let result = run(&config, &hooks);
    assert_eq!(exit_code(&result), EXIT_ASSERTION);
    let report = json(&dir.path().join("verify.json"));
    assert_eq!(report["passed"], false);
}

#[test]
fn thread_variable_is_validated() {
    let dir = tempfile::tempdir().unwrap();
    let bad = Process::new(env!("CARGO_BIN_EXE_membrane-tree"))
        .args(["greens", "--out"])
        .arg(dir.path())
        .env("MEMBRANE_TREE_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(bad.status.code(), Some(2));
    let ok = Process::new(env!("CARGO_BIN_EXE_membrane-tree"))
        .args(["extremes", "--n", "2", "--samples", "100", "--out"])
        .arg(dir.path())
        .env("MEMBRANE_TREE_THREADS", "1")
        .output()
        .unwrap();
    assert_eq!(ok.status.code(), Some(0));
}

#[test]
fn config_defaults() {
    let c = RunConfig::new(Command::Extremes, 3);
    assert_eq!((c.n, c.samples, c.seed, c.format), (4, 1000, 0, Format::Csv));
    assert_eq!(c.theta, vec![-1.0, 0.0, 1.0, 2.0]);
    assert_eq!(RunConfig::new(Command::Verify, 3).n, 8);
}
