use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn arealreg(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_arealreg"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("spawn arealreg")
}

fn simulate(dir: &Path, rows: usize, seed: u64) {
    let (r, s) = (rows.to_string(), seed.to_string());
    let out = arealreg(
        &["simulate", "--rows", &r, "--cols", &r, "--seed", &s, "--out", "data.csv", "--graph-out", "edges.txt"],
        dir,
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn simulate_writes_expected_columns_and_graph() {
    let dir = tempfile::tempdir().unwrap();
    simulate(dir.path(), 6, 11);
    let data = std::fs::read_to_string(dir.path().join("data.csv")).unwrap();
    let mut lines = data.lines();
    assert_eq!(lines.next().unwrap(), "id,row,col,x,y,x1,x2,s,p,z");
    assert_eq!(lines.count(), 36);
    let edges = std::fs::read_to_string(dir.path().join("edges.txt")).unwrap();
    assert!(edges.starts_with("n=36"));
    assert_eq!(edges.lines().count(), 1 + 2 * 6 * 5);
}

#[test]
fn simulate_is_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    simulate(a.path(), 5, 4);
    simulate(b.path(), 5, 4);
    assert_eq!(
        std::fs::read(a.path().join("data.csv")).unwrap(),
        std::fs::read(b.path().join("data.csv")).unwrap()
    );
}

#[test]
fn fit_logistic_writes_result_json() {
    let dir = tempfile::tempdir().unwrap();
    simulate(dir.path(), 10, 3);
    let out = arealreg(
        &["fit", "--model", "logistic", "--data", "data.csv", "--graph", "edges.txt", "--out", "fit.json"],
        dir.path(),
    );
    assert!(out.status.success());
    let v = read_json(&dir.path().join("fit.json"));
    assert_eq!(v["method"], "logistic");
    assert_eq!(v["estimates"].as_array().unwrap().len(), 2);
    assert_eq!(v["p_hat"].as_array().unwrap().len(), 100);
    let iv = &v["intervals"][1];
    let est = v["estimates"][1].as_f64().unwrap();
    assert!(iv["lower"].as_f64().unwrap() < est && est < iv["upper"].as_f64().unwrap());
}

#[test]
fn fit_adjusted_rsr_keeps_draws() {
    let dir = tempfile::tempdir().unwrap();
    simulate(dir.path(), 8, 5);
    let out = arealreg(
        &[
            "fit", "--model", "rsr", "--q", "6", "--adjust", "--iterations", "1500", "--burn-in", "500", "--data", "data.csv",
            "--graph", "edges.txt", "--out", "fit.json", "--samples-dir", "draws",
        ],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v = read_json(&dir.path().join("fit.json"));
    assert_eq!(v["method"], "rsr_adjusted");
    assert!(dir.path().join("draws/beta.csv").exists());
    assert!(dir.path().join("draws/meta.json").exists());
}

#[test]
fn eigs_writes_requested_columns() {
    let dir = tempfile::tempdir().unwrap();
    simulate(dir.path(), 6, 1);
    let out = arealreg(&["eigs", "--graph", "edges.txt", "--q", "4", "--out", "basis.csv"], dir.path());
    assert!(out.status.success());
    let text = std::fs::read_to_string(dir.path().join("basis.csv")).unwrap();
    let rows: Vec<Vec<f64>> = text
        .lines()
        .map(|l| l.split(',').map(|f| f.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 37);
    assert!(rows.iter().all(|r| r.len() == 4));
    assert!(rows[0].windows(2).all(|w| w[0] >= w[1] - 1e-12));
    // Eigenvectors of M₁ sum to zero.
    for j in 0..4 {
        let s: f64 = rows[1..].iter().map(|r| r[j]).sum();
        assert!(s.abs() < 1e-8);
    }
}

#[test]
fn eigs_with_design_file() {
    let dir = tempfile::tempdir().unwrap();
    simulate(dir.path(), 5, 1);
    let mut design = String::from("one,t\n");
    for i in 0..25 {
        design.push_str(&format!("1,{}\n", (i % 5) as f64));
    }
    std::fs::write(dir.path().join("x.csv"), design).unwrap();
    let out = arealreg(
        &["eigs", "--graph", "edges.txt", "--design", "x.csv", "--q", "3", "--out", "basis.csv"],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(dir.path().join("basis.csv")).unwrap();
    let rows: Vec<Vec<f64>> = text
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(|f| f.parse().unwrap()).collect())
        .collect();
    for j in 0..3 {
        let dot: f64 = rows.iter().enumerate().map(|(i, r)| r[j] * (i % 5) as f64).sum();
        assert!(dot.abs() < 1e-8);
    }
}

#[test]
fn select_rules_write_json() {
    let dir = tempfile::tempdir().unwrap();
    simulate(dir.path(), 8, 2);
    for (rule, name) in [("q0", "q0_stepwise"), ("ttest", "ttest"), ("stepwise", "ttest_stepwise")] {
        let out = arealreg(
            &["select", "--rule", rule, "--data", "data.csv", "--graph", "edges.txt", "--out", "sel.json"],
            dir.path(),
        );
        assert!(out.status.success(), "{rule}: {}", String::from_utf8_lossy(&out.stderr));
        let v = read_json(&dir.path().join("sel.json"));
        assert_eq!(v["rule"], name);
        assert!(v["selected_indices"].is_array());
    }
}

#[test]
fn study_from_config_writes_report_and_surfaces() {
    let dir = tempfile::tempdir().unwrap();
    let config = r#"{
        "rows": 6, "cols": 6, "replicates": 2, "beta_true": [0.0, 1.0, 1.0], "seed": 9,
        "models": [{"method": "logistic"}, {"method": "autologistic"}],
        "settings": {"autologistic_interval": "naive"},
        "parallelism": 1
    }"#;
    std::fs::write(dir.path().join("study.json"), config).unwrap();
    let out = arealreg(
        &["study", "--config", "study.json", "--out", "report.csv", "--surfaces-dir", "surf", "--records", "records.csv"],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report = std::fs::read_to_string(dir.path().join("report.csv")).unwrap();
    let mut lines = report.lines();
    assert_eq!(
        lines.next().unwrap(),
        "model,median_estimate,median_ci_width,mse,coverage_rate,type2_rate,median_pred_error"
    );
    assert_eq!(lines.count(), 2);
    assert!(dir.path().join("surf/true_p.csv").exists());
    assert!(dir.path().join("surf/logistic.csv").exists());
    assert!(dir.path().join("records.csv").exists());
}

#[test]
fn validation_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    simulate(dir.path(), 5, 1);
    let cases: [&[&str]; 5] = [
        &["fit", "--model", "bsf", "--data", "data.csv", "--graph", "edges.txt", "--out", "f.json"],
        &["fit", "--model", "logistic", "--adjust", "--data", "data.csv", "--graph", "edges.txt", "--out", "f.json"],
        &["fit", "--model", "logistic", "--covariates", "nope", "--data", "data.csv", "--graph", "edges.txt", "--out", "f.json"],
        &["fit", "--model", "logistic", "--data", "missing.csv", "--graph", "edges.txt", "--out", "f.json"],
        &["simulate", "--rows", "0", "--cols", "3", "--seed", "1", "--out", "x.csv"],
    ];
    for args in cases {
        let out = arealreg(args, dir.path());
        assert_eq!(out.status.code(), Some(2), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    }
    let out = arealreg(&["no-such-command"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn separated_data_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    simulate(dir.path(), 8, 1);
    let data = std::fs::read_to_string(dir.path().join("data.csv")).unwrap();
    let mut out_csv = String::new();
    for (i, line) in data.lines().enumerate() {
        if i == 0 {
            out_csv.push_str(line);
        } else {
            let mut f: Vec<String> = line.split(',').map(str::to_string).collect();
            let x1: f64 = f[5].parse().unwrap();
            f[9] = if x1 > 0.0 { "1" } else { "0" }.to_string();
            out_csv.push_str(&f.join(","));
        }
        out_csv.push('\n');
    }
    std::fs::write(dir.path().join("sep.csv"), out_csv).unwrap();
    let out = arealreg(
        &["fit", "--model", "logistic", "--data", "sep.csv", "--graph", "edges.txt", "--out", "f.json"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}
