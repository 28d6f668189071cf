use std::path::Path;
use std::process::Command;

fn hipe() -> Command {
    Command::new(env!("CARGO_BIN_EXE_hipe"))
}

const TINY: &str = r#"{
    "benchmark": "hartmann4_4d",
    "q": 3,
    "batches": 2,
    "mcmc_burn_in": 16,
    "mcmc_draws": 24,
    "mcmc_thin": 8,
    "acq_test_points": 32,
    "acq_base_draws": 16,
    "opt_restarts": 2,
    "opt_raw_samples": 16,
    "opt_max_iters": 20,
    "eval_test_points": 128
}"#;

fn write_config(dir: &Path) -> std::path::PathBuf {
    let p = dir.join("cfg.json");
    std::fs::write(&p, TINY).unwrap();
    p
}

#[test]
fn repeated_runs_give_identical_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let mut outputs = Vec::new();
    for name in ["a", "b"] {
        let out = dir.path().join(name);
        let status = hipe()
            .args(["run", "--algo", "hipe", "--seeds", "0..2", "--config"])
            .arg(&cfg)
            .arg("--out")
            .arg(&out)
            .status()
            .unwrap();
        assert!(status.success());
        outputs.push(std::fs::read(out.join("runs.csv")).unwrap());
        assert!(out.join("run_0.json").exists() && out.join("run_1.json").exists());
    }
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn flags_override_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let out = dir.path().join("o");
    let status = hipe()
        .args(["run", "--algo", "lhs", "--q", "2", "--batches", "1", "--seeds", "5", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    let rec: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("run_5.json")).unwrap()).unwrap();
    assert_eq!(rec["algo"], "lhs");
    assert_eq!(rec["batches"].as_array().unwrap().len(), 1);
    assert_eq!(rec["batches"][0]["design"].as_array().unwrap().len(), 2);
}

#[test]
fn config_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"qq": 3}"#).unwrap();
    let status = hipe().args(["run", "--config"]).arg(&bad).status().unwrap();
    assert_eq!(status.code(), Some(1));
    let status = hipe().args(["run", "--algo", "nope", "--out"]).arg(dir.path()).status().unwrap();
    assert_eq!(status.code(), Some(1));
    let status = hipe().args(["run", "--seeds", "3..1", "--out"]).arg(dir.path()).status().unwrap();
    assert_eq!(status.code(), Some(1));
}

#[test]
fn all_seeds_failing_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let status = hipe()
        .args(["run", "--algo", "bald", "--q", "300", "--seeds", "0", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path().join("o"))
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));
    let csv = std::fs::read_to_string(dir.path().join("o/runs.csv")).unwrap();
    assert!(csv.lines().nth(1).unwrap().ends_with(",failure,1"));
}

#[test]
fn eval_acq_prints_a_value() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let batch = dir.path().join("batch.json");
    std::fs::write(&batch, r#"{"points": [[0.5, 0.5, 0.5, 0.5], [0.1, 0.9, 0.2, 0.8]]}"#).unwrap();
    let out = hipe().args(["eval-acq", "--algo", "nipv", "--batch-file"]).arg(&batch).arg("--config").arg(&cfg).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v: f64 = String::from_utf8(out.stdout).unwrap().trim().parse().unwrap();
    assert!(v.is_finite() && v < 0.0);

    let out = hipe().args(["eval-acq", "--algo", "ucb", "--batch-file"]).arg(&batch).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn bench_list_and_version() {
    let out = hipe().arg("bench-list").output().unwrap();
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().count(), 11);
    assert!(text.contains("hartmann6_12d,6,12,0.5,"));
    let out = hipe().arg("version").output().unwrap();
    assert!(String::from_utf8(out.stdout).unwrap().starts_with("hipe "));
}

#[test]
fn two_shot_flag_uses_two_shot_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let status = hipe().args(["run", "--two-shot", "--algo", "sobol", "--seeds", "0", "--out"]).arg(&out).status().unwrap();
    assert!(status.success());
    let rec: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("run_0.json")).unwrap()).unwrap();
    assert_eq!(rec["mode"], "two_shot");
    assert_eq!(rec["batches"][0]["design"].as_array().unwrap().len(), 24);
}
