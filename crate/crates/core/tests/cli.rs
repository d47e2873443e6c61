use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use puffer::io::{load_csv, save_problem_csv, ColumnRef};
use puffer::RegressionProblem;
use serde_json::Value;

fn puffer(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_puffer"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn error_line(out: &Output, code: i32) {
    assert_eq!(out.status.code(), Some(code));
    let err = String::from_utf8_lossy(&out.stderr);
    let line = err
        .lines()
        .find(|l| l.starts_with("ERROR "))
        .unwrap_or_else(|| panic!("no ERROR line in {err:?}"));
    assert!(line.starts_with(&format!("ERROR {code}:")), "{line}");
    assert_eq!(err.lines().filter(|l| l.starts_with("ERROR ")).count(), 1);
}

fn sampled_dataset(dir: &Path, kind: &str, n: usize, p: usize) -> PathBuf {
    let out = dir.join(format!("{kind}.csv"));
    let n = n.to_string();
    let p = p.to_string();
    let status = puffer(&[
        "sample", kind, "--n", &n, "--p", &p, "--rho", "0.5", "--s", "3", "--output",
        path_str(&out),
    ]);
    assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
    out
}

#[test]
fn huge_lambda_fits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let data = sampled_dataset(dir.path(), "gaussian", 30, 8);
    let out = puffer(&["fit", "--input", path_str(&data), "--y-col", "y", "--lambda", "1e9"]);
    assert_eq!(out.status.code(), Some(0));
    let v = json(&out);
    assert!(v["coefficients"].as_array().unwrap().iter().all(|c| c.as_f64() == Some(0.0)));
    assert_eq!(v["active_count"], 0);
}

#[test]
fn path_fit_with_both_rules() {
    let dir = tempfile::tempdir().unwrap();
    let data = sampled_dataset(dir.path(), "constant-cor", 40, 60);
    let out = puffer(&[
        "fit", "--input", path_str(&data), "--y-col", "y", "--path", "--grid", "50",
        "--select", "first-df", "4", "--precondition",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v = json(&out);
    assert!(v["selection"]["df"].as_u64().unwrap() >= 4);
    assert_eq!(v["preconditioned"], true);

    let file = dir.path().join("fit.json");
    let out = puffer(&[
        "fit", "--input", path_str(&data), "--y-col", "1", "--path", "--select", "ols-bic",
        "--output", path_str(&file),
    ]);
    assert!(out.status.success());
    let v: Value = serde_json::from_str(&std::fs::read_to_string(&file).unwrap()).unwrap();
    assert_eq!(v["selection"]["rule"], "ols_bic");
    assert_eq!(v["p"], 60);
}

#[test]
fn diagnose_orthonormal_design() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("eye.csv");
    std::fs::write(&data, "x1,x2,x3\n1,0,0\n0,1,0\n0,0,1\n0,0,0\n").unwrap();
    let out = puffer(&["diagnose", "--input", path_str(&data), "--support", "1,3", "--signs", "+,-"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v = json(&out);
    assert_eq!(v["before"]["ic_score"], 0.0);
    assert_eq!(v["before"]["eta"], 1.0);
    assert_eq!(v["support"], serde_json::json!([1, 3]));
    assert!(v["theorem1_bound"].is_number());

    let out = puffer(&["ic-score", "--input", path_str(&data), "--support", "2"]);
    assert_eq!(json(&out)["ic_score"], 0.0);
}

#[test]
fn precondition_writes_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    let data = sampled_dataset(dir.path(), "gaussian", 12, 30);
    let out_csv = dir.path().join("tilde.csv");
    let out = puffer(&[
        "precondition", "--input", path_str(&data), "--y-col", "y", "--output", path_str(&out_csv),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let side: Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("tilde.csv.svd.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(side["rank"], 12);
    assert_eq!(side["singular_values"].as_array().unwrap().len(), 12);
    let p = load_csv(&out_csv, &ColumnRef::Name("y".into())).unwrap();
    let x = p.x();
    assert!((x * x.transpose() - nalgebra::DMatrix::identity(12, 12)).amax() < 1e-8);
}

#[test]
fn error_codes() {
    let dir = tempfile::tempdir().unwrap();
    // usage
    error_line(&puffer(&["fit", "--lambda", "1"]), 1);
    error_line(&puffer(&["sample", "wishart", "--n", "2", "--p", "2", "--output", "x"]), 1);
    // data
    let missing = dir.path().join("nope.csv");
    error_line(&puffer(&["fit", "--input", path_str(&missing), "--y-col", "y", "--lambda", "1"]), 2);
    let blank = dir.path().join("blank.csv");
    std::fs::write(&blank, "y,x1\n1,\n").unwrap();
    let out = puffer(&["fit", "--input", path_str(&blank), "--y-col", "y", "--lambda", "1"]);
    error_line(&out, 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("row 2, column 2"));
    let good = sampled_dataset(dir.path(), "gaussian", 10, 4);
    error_line(&puffer(&["fit", "--input", path_str(&good), "--y-col", "w", "--lambda", "1"]), 2);
    // numerical
    let zero = dir.path().join("zero.csv");
    std::fs::write(&zero, "y,x1,x2\n1,0,0\n2,0,0\n").unwrap();
    error_line(
        &puffer(&["fit", "--input", path_str(&zero), "--y-col", "y", "--precondition", "--lambda", "1"]),
        3,
    );
    let dup = dir.path().join("dup.csv");
    std::fs::write(&dup, "x1,x2,x3\n1,1,0\n2,2,1\n3,3,5\n").unwrap();
    error_line(&puffer(&["ic-score", "--input", path_str(&dup), "--support", "1,2"]), 3);
}

#[test]
fn simulate_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("cfg.json");
    std::fs::write(
        &config,
        r#"{"study": "first_df_sweep", "design": {"kind": "constant_correlation", "n": 30},
            "p_grid": [60], "rho_grid": [0.6], "s": 3, "replicates": 3,
            "first_df": 4, "grid_size": 30}"#,
    )
    .unwrap();
    let run = |name: &str, seed: &str| {
        let out = dir.path().join(name);
        let o = puffer(&[
            "simulate", "--config", path_str(&config), "--out", path_str(&out), "--seed", seed,
            "--no-timestamp",
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        (
            std::fs::read(&out).unwrap(),
            std::fs::read(dir.path().join(format!("{name}.meta.json"))).unwrap(),
        )
    };
    let a = run("a.csv", "7");
    let b = run("b.csv", "7");
    let c = run("c.csv", "8");
    assert_eq!(a, b);
    assert_ne!(a.0, c.0);

    std::fs::write(&config, r#"{"study": "bic_sweep", "design": {"kind": "iid_gaussian", "n": 5},
        "p_grid": [6], "replicates": 1, "replicate": 2}"#)
    .unwrap();
    let o = puffer(&["simulate", "--config", path_str(&config), "--out", path_str(&dir.path().join("d.csv"))]);
    error_line(&o, 2);
}

#[test]
fn csv_round_trip_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let x = puffer::designs::sample_design(&puffer::designs::DesignSpec {
        kind: puffer::designs::DesignKind::ConstantCorrelation { rho: 0.3 },
        n: 25,
        p: 9,
        seed: 4,
    })
    .unwrap();
    let y = puffer::designs::sample_noise(25, 2.0, 5).unwrap() * 1e-7 + x.column(0) * 1e5;
    let problem = RegressionProblem::new(x, y).unwrap();
    let path = dir.path().join("round.csv");
    save_problem_csv(&path, &problem).unwrap();
    let back = load_csv(&path, &ColumnRef::Name("y".into())).unwrap();
    assert_eq!(back.x(), problem.x());
    assert_eq!(back.y(), problem.y());
}

#[test]
fn shipped_configs_parse() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs");
    let mut seen = 0;
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "json") {
            puffer::io::read_config(&path).unwrap_or_else(|e| panic!("{path:?}: {e}"));
            seen += 1;
        }
    }
    assert!(seen >= 6);
}

#[test]
fn simulate_correlation_config() {
    let dir = tempfile::tempdir().unwrap();
    let config = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/correlation_reduction.json");
    let out = dir.path().join("cor.csv");
    let o = puffer(&["simulate", "--config", path_str(&config), "--out", path_str(&out), "--no-timestamp"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let mut reader = csv::Reader::from_path(&out).unwrap();
    let header = reader.headers().unwrap().clone();
    let col = |name: &str| header.iter().position(|h| h == name).unwrap();
    let row = reader
        .records()
        .map(|r| r.unwrap())
        .find(|r| &r[col("replicate")] == "mean")
        .unwrap();
    let get = |name: &str| row[col(name)].parse::<f64>().unwrap();
    assert!((get("mean_cor_before") - 0.90).abs() <= 0.03);
    assert!((get("sd_cor_before") - 0.01).abs() <= 0.01);
    assert!((get("mean_cor_after") - 0.005).abs() <= 0.05);
    assert!((get("sd_cor_after") - 0.07).abs() <= 0.04);
}
