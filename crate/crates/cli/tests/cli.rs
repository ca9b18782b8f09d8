use std::path::Path;
use std::process::{Command, Output};

const CONFIG: &str = r#"{"s": 0.5, "q": 0.0, "d": 2, "M": 4, "n_grid": [64, 128, 256],
  "truncation_level": 8, "seed": 3}"#;

fn mklrate(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mklrate"))
        .args(args)
        .current_dir(dir)
        .env_remove("MKLRATE_SEED")
        .output()
        .unwrap()
}

fn setup(config: &str) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("config.json"), config).unwrap();
    dir
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn sweep_writes_csv_and_summary() {
    let dir = setup(CONFIG);
    let o = mklrate(&["sweep", "--config", "config.json", "--out", "out", "--quiet"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(dir.path().join("out/results.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 4);
    assert!(lines[0].starts_with("n,rep,seed,s,q,d,M,profile,lambda_bar,lambda1,err_l2sq"));
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("out/summary.json")).unwrap())
            .unwrap();
    assert!(summary["fitted_exponent"].is_null());
    assert!((summary["reference_exponent"].as_f64().unwrap() + 2.0 / 3.0).abs() < 1e-15);
    // The config echo re-parses to the configuration that was run.
    let echoed: mklrate::ExperimentConfig =
        serde_json::from_value(summary["config"].clone()).unwrap();
    let original: mklrate::ExperimentConfig = serde_json::from_str(CONFIG).unwrap();
    assert_eq!(echoed, original);
    assert!(summary["diagnostics"]["incoherence_product"].as_f64().is_some());
    // Only the two outputs remain: no stray temporary files.
    assert_eq!(std::fs::read_dir(dir.path().join("out")).unwrap().count(), 2);
}

#[test]
fn sweep_is_deterministic_and_seed_overrides_apply() {
    let dir = setup(CONFIG);
    let run = |out: &str, extra: &[&str]| {
        let mut args = vec!["sweep", "--config", "config.json", "--out", out, "--quiet"];
        args.extend_from_slice(extra);
        let o = mklrate(&args, dir.path());
        assert_eq!(o.status.code(), Some(0));
        let csv = std::fs::read_to_string(dir.path().join(out).join("results.csv")).unwrap();
        // Drop the runtime column, the only non-deterministic field.
        csv.lines()
            .map(|l| l.rsplit_once(',').unwrap().0.to_string())
            .collect::<Vec<_>>()
    };
    let a = run("a", &[]);
    let b = run("b", &["--jobs", "1"]);
    assert_eq!(a, b);
    let c = run("c", &["--seed", "99"]);
    assert_ne!(a[1..], c[1..]);

    let o = Command::new(env!("CARGO_BIN_EXE_mklrate"))
        .args(["sweep", "--config", "config.json", "--out", "d", "--quiet"])
        .current_dir(dir.path())
        .env("MKLRATE_SEED", "99")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0));
    let d: Vec<String> = std::fs::read_to_string(dir.path().join("d/results.csv"))
        .unwrap()
        .lines()
        .map(|l| l.rsplit_once(',').unwrap().0.to_string())
        .collect();
    assert_eq!(c, d);
}

#[test]
fn diagnose_reports_positive_incoherence() {
    let dir = setup(CONFIG);
    let o = mklrate(&["diagnose", "--config", "config.json"], dir.path());
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    let line = text
        .lines()
        .find(|l| l.starts_with("incoherence_product"))
        .unwrap();
    let value: f64 = line.rsplit(' ').next().unwrap().parse().unwrap();
    assert!(value > 0.0, "{text}");
}

#[test]
fn spectrum_and_solve_run() {
    let dir = setup(CONFIG);
    let o = mklrate(&["spectrum", "--config", "config.json", "--top", "3"], dir.path());
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(stdout(&o).lines().count(), 4);
    let o = mklrate(&["solve", "--config", "config.json", "--n", "100", "--out", "s"], dir.path());
    assert_eq!(o.status.code(), Some(0));
    let sol: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("s/solution.json")).unwrap())
            .unwrap();
    assert_eq!(sol["converged"], true);
}

#[test]
fn compare_runs_both_profiles() {
    let dir = setup(CONFIG);
    let o = mklrate(&["compare", "--config", "config.json", "--out", "c"], dir.path());
    assert_eq!(o.status.code(), Some(0));
    let cmp: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("c/comparison.json")).unwrap())
            .unwrap();
    assert_eq!(cmp["points"].as_array().unwrap().len(), 3);
}

#[test]
fn usage_and_validation_errors_exit_one() {
    let dir = setup(CONFIG);
    let o = mklrate(&["frobnicate"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));

    std::fs::write(
        dir.path().join("bad.json"),
        r#"{"s": 0.5, "q": 0.0, "d": 5, "M": 4, "n_grid": [64]}"#,
    )
    .unwrap();
    let o = mklrate(&["sweep", "--config", "bad.json"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("`d`"));

    std::fs::write(dir.path().join("missing.json"), r#"{"s": 0.5, "q": 0.0, "d": 1, "n_grid": [64]}"#)
        .unwrap();
    let o = mklrate(&["sweep", "--config", "missing.json"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("M"));

    let o = mklrate(&["sweep", "--config", "nope.json"], dir.path());
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn runtime_failure_exits_two() {
    // Every cell stops after one sweep at an unreachable tolerance.
    let dir = setup(
        r#"{"s": 0.5, "q": 0.0, "d": 2, "M": 4, "n_grid": [64], "truncation_level": 8,
            "solver": {"tol": 1e-300, "max_sweeps": 1, "order": {"kind": "cyclic"}}}"#,
    );
    let o = mklrate(&["sweep", "--config", "config.json", "--out", "o"], dir.path());
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(!dir.path().join("o/results.csv").exists());
}
