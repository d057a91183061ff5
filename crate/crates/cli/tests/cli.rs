use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use exitctl::formats::eigenpair_lambda;
use serde_json::{json, Value};

fn scenario(name: &str) -> Value {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios").join(name);
    serde_json::from_slice(&fs::read(path).unwrap()).unwrap()
}

/// The example scenario shrunk so that optimize and verify take a second.
fn small_example() -> Value {
    let mut v = scenario("example.json");
    v["grid"]["n"] = json!([17, 9, 9]);
    v["sim"]["n_paths"] = json!(2000);
    v
}

fn write_config(dir: &Path, v: &Value) -> PathBuf {
    let path = dir.join("config.json");
    fs::write(&path, serde_json::to_vec_pretty(v).unwrap()).unwrap();
    path
}

fn run(args: &[&str], config: &Path, out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_exitctl"))
        .args(args)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn validate_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let config = Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios/example.json");
    let o = run(&["validate"], &config, &out);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(!out.exists());
}

#[test]
fn eigen_on_pure_diffusion() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let config = Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios/pure_diffusion.json");
    let o = run(&["eigen"], &config, &out);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let lambda = eigenpair_lambda(&fs::read(out.join("eigenpair.csv")).unwrap()).unwrap();
    assert!((lambda - PI * PI / 2.0).abs() < 0.01 * PI * PI / 2.0, "{lambda}");
    assert!(out.join("manifest.json").exists());
    assert!(!out.join("operator.csv").exists());
}

#[test]
fn dump_operator_writes_triplets() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let mut v = scenario("pure_diffusion.json");
    v["grid"]["n"] = json!([6, 3, 3]);
    let config = write_config(dir.path(), &v);
    let o = run(&["eigen", "--dump-operator"], &config, &out);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = fs::read_to_string(out.join("operator.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("row,col,value"));
    // four interior nodes on a line: 4 diagonal and 6 neighbor entries
    assert_eq!(lines.count(), 10);
}

#[test]
fn optimize_then_verify_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let config = write_config(dir.path(), &small_example());
    let o = run(&["optimize"], &config, &out);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let history = fs::read_to_string(out.join("lambda_history.csv")).unwrap();
    assert!(history.starts_with("iteration,lambda\n1,"));

    let o = run(&["verify"], &config, &out);
    assert_eq!(o.status.code(), Some(0), "{}{}", stdout(&o), stderr(&o));
    let report = fs::read_to_string(out.join("verification_report.txt")).unwrap();
    let lines: Vec<&str> = report.lines().collect();
    assert_eq!(lines.last(), Some(&"overall PASS"));
    assert!(lines.len() >= 5);
    assert!(lines.iter().all(|l| l.contains("PASS")), "{report}");
}

#[test]
fn forced_verification_failure_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let mut v = small_example();
    v["tolerances"]["rate_tolerance_multiplier"] = json!(1e-6);
    v["tolerances"]["allowance_per_spacing"] = json!(0.0);
    v["tolerances"]["allowance_per_sqrt_dt"] = json!(0.0);
    let config = write_config(dir.path(), &v);
    let o = run(&["verify"], &config, &out);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    let report = fs::read_to_string(out.join("verification_report.txt")).unwrap();
    assert!(report.ends_with("overall FAIL\n"), "{report}");
    assert!(report.lines().any(|l| l.starts_with("mc_crosscheck") && l.contains("FAIL")), "{report}");
}

#[test]
fn missing_field_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let mut v = scenario("example.json");
    v["model"].as_object_mut().unwrap().remove("xi");
    let config = write_config(dir.path(), &v);
    let o = run(&["validate"], &config, &dir.path().join("out"));
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("model.xi"), "{}", stderr(&o));
}

#[test]
fn unknown_subcommand_and_missing_file_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["frobnicate"], &dir.path().join("c.json"), dir.path());
    assert_eq!(o.status.code(), Some(1));
    let o = run(&["validate"], &dir.path().join("absent.json"), dir.path());
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn all_censored_mean_time_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let mut v = scenario("example.json");
    v["sim"]["t_max"] = json!(0.01);
    v["sim"]["n_paths"] = json!(200);
    let config = write_config(dir.path(), &v);
    let o = run(&["meantime"], &config, &out);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn policy_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let v = small_example();
    let config = write_config(dir.path(), &v);
    let o = run(&["optimize"], &config, &out);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let solution = fs::read_to_string(out.join("optimal_solution.csv")).unwrap();
    let lambda_star: f64 = solution.lines().next().unwrap().strip_prefix("# lambda_star=").unwrap().parse().unwrap();

    let mut v = v;
    v["control"]["policy_file"] = json!(out.join("optimal_solution.csv"));
    let config = write_config(dir.path(), &v);
    let eigen_out = dir.path().join("eigen");
    let o = run(&["eigen"], &config, &eigen_out);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let lambda = eigenpair_lambda(&fs::read(eigen_out.join("eigenpair.csv")).unwrap()).unwrap();
    assert!((lambda - lambda_star).abs() <= 1e-9 * lambda_star, "{lambda} vs {lambda_star}");
}

#[test]
fn seed_override_changes_survival() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), &small_example());
    let read = |seed: &str| {
        let out = dir.path().join(seed);
        let o = Command::new(env!("CARGO_BIN_EXE_exitctl"))
            .args(["survival", "--seed", seed, "--n-paths", "500", "--config"])
            .arg(&config)
            .arg("--out")
            .arg(&out)
            .output()
            .unwrap();
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        fs::read(out.join("survival.csv")).unwrap()
    };
    assert_ne!(read("3"), read("4"));
}
