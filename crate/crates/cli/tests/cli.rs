use std::path::Path;
use std::process::{Command, Output};

fn sketchls(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sketchls"))
        .args(args)
        .env_remove("SKETCHLS_THREADS")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn gen(dir: &Path, n: usize, p: usize) -> String {
    let path = dir.join("data.csv");
    let o = sketchls(&["--seed", "3", "gen", "--n", &n.to_string(), "--p", &p.to_string(), "-o", path.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    path.to_str().unwrap().to_owned()
}

fn write(dir: &Path, name: &str, body: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, body).unwrap();
    path.to_str().unwrap().to_owned()
}

#[test]
fn gen_writes_header_and_rows() {
    let o = sketchls(&["--seed", "1", "gen", "--n", "10", "--p", "3"]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert_eq!(text.lines().next(), Some("x1,x2,x3,y"));
    assert_eq!(text.lines().count(), 11);
    assert_eq!(text, stdout(&sketchls(&["--seed", "1", "gen", "--n", "10", "--p", "3"])));
}

#[test]
fn gen_kheavy_needs_k() {
    let o = sketchls(&["gen", "--design", "kheavy", "--n", "64", "--p", "2"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("--k"));
    let o = sketchls(&["gen", "--design", "kheavy", "--n", "64", "--p", "2", "--k", "4"]);
    assert!(o.status.success());
}

#[test]
fn leverage_sums_to_p() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen(dir.path(), 40, 3);
    let o = sketchls(&["leverage", &data]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert_eq!(text.lines().next(), Some("index,score"));
    let total: f64 = text.lines().skip(1).map(|l| l.split(',').nth(1).unwrap().parse::<f64>().unwrap()).sum();
    assert!((total - 3.0).abs() < 1e-9);
    let o = sketchls(&["--seed", "2", "leverage", &data, "--approx"]);
    assert!(o.status.success());
    assert_eq!(stdout(&o).lines().count(), 41);
}

#[test]
fn criteria_with_identity_sketch_are_one() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen(dir.path(), 30, 2);
    let spec = write(dir.path(), "spec.json", r#"{"scheme": "identity", "r": 30}"#);
    let o = sketchls(&["criteria", &data, "--spec", &spec, "--mc-draws", "50"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    for key in ["c_wc", "c_pe", "c_re"] {
        let x = v["closed_form"][key].as_f64().unwrap();
        assert!((x - 1.0).abs() < 1e-12, "{key} = {x}");
    }
    assert!(v["monte_carlo"]["c_pe"].as_f64().is_some());
}

#[test]
fn sketch_solve_reports_ratio_at_least_one() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen(dir.path(), 64, 3);
    let spec = write(dir.path(), "spec.json", r#"{"scheme": "sampling_rescaled", "r": 20, "seed": 5}"#);
    let o = sketchls(&["sketch-solve", &data, "--spec", &spec]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["beta_s"].as_array().unwrap().len(), 3);
    let ratio: f64 = v["residual_ratio"].as_str().unwrap().parse().unwrap();
    assert!(ratio >= 1.0 - 1e-12);
}

#[test]
fn experiment_writes_outputs_and_seed_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "cfg.json",
        r#"{"design": {"kind": "gaussian"}, "n": 64, "p": 3, "r_grid": [16, 32],
            "schemes": [{"scheme": "subgaussian_gaussian"}, {"scheme": "hadamard"}],
            "trials": 5, "master_seed": 1}"#,
    );
    let run = |seed: &str, out: &str| {
        let out = dir.path().join(out);
        let o = sketchls(&["--seed", seed, "experiment", &cfg, "-o", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        assert!(stdout(&o).starts_with("sat_rate "));
        assert!(out.join("summary.json").exists());
        std::fs::read(out.join("rows.csv")).unwrap()
    };
    let a = run("9", "a");
    let b = run("9", "b");
    let c = run("10", "c");
    assert_eq!(a, b);
    assert_ne!(a, c);
    let o = sketchls(&["--seed", "9", "--threads", "1", "experiment", &cfg, "-o", dir.path().join("d").to_str().unwrap()]);
    assert!(o.status.success());
    assert_eq!(std::fs::read(dir.path().join("d/rows.csv")).unwrap(), a);
}

#[test]
fn bad_inputs_fail_on_stderr() {
    let o = sketchls(&["leverage", "/nonexistent/data.csv"]);
    assert!(!o.status.success());
    assert!(o.stdout.is_empty());
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error:"));

    let dir = tempfile::tempdir().unwrap();
    let data = gen(dir.path(), 20, 2);
    let spec = write(dir.path(), "bad.json", r#"{"scheme": "nope", "r": 4}"#);
    let o = sketchls(&["criteria", &data, "--spec", &spec]);
    assert!(!o.status.success());
    assert!(o.stdout.is_empty());

    let spec = write(dir.path(), "hadamard.json", r#"{"scheme": "hadamard", "r": 4}"#);
    let o = sketchls(&["criteria", &data, "--spec", &spec]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("power of two"));

    assert!(!sketchls(&["frobnicate"]).status.success());
}

#[test]
fn verify_prints_every_criterion_and_exit_reflects_result() {
    let dir = tempfile::tempdir().unwrap();
    let o = sketchls(&["verify", "-o", dir.path().to_str().unwrap()]);
    let text = stdout(&o);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 10);
    for (i, line) in lines.iter().enumerate() {
        assert!(line.starts_with(&format!("criterion {:>2} [", i + 1)), "{line}");
    }
    let any_fail = lines.iter().any(|l| l.contains("[FAIL]"));
    assert_eq!(o.status.success(), !any_fail);
    for f in ["rows.csv", "summary.json", "verify.json"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
}
