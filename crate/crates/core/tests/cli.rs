use std::path::Path;
use std::process::{Command, Output};

fn softrod(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_softrod")).args(args).output().expect("binary runs")
}

fn text(bytes: &[u8]) -> String {
    String::from_utf8_lossy(bytes).into_owned()
}

fn metrics_rows(dir: &Path) -> Vec<String> {
    std::fs::read_to_string(dir.join("metrics.csv")).unwrap().lines().map(str::to_owned).collect()
}

#[test]
fn check_reports_default_setup() {
    let out = softrod(&["check"]);
    assert!(out.status.success(), "{}", text(&out.stderr));
    let stdout = text(&out.stdout);
    assert!(stdout.contains("initial conditions: hold"), "{stdout}");
    assert!(stdout.contains("cfl: dt = 2e-4"), "{stdout}");
}

#[test]
fn check_flags_a_violated_bound() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("fast.cfg");
    std::fs::write(&cfg, "dt = 5e-4\n").unwrap();
    let out = softrod(&["check", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(text(&out.stdout).contains("exceeded"));
}

#[test]
fn run_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "# short run\nlog_every = 10\nsnapshot_every = 25\n").unwrap();
    let out_dir = dir.path().join("out");
    let out = softrod(&["run", "--config", cfg.to_str().unwrap(), "--out", out_dir.to_str().unwrap(), "--duration", "0.01", "--seed", "4"]);
    assert!(out.status.success(), "{}", text(&out.stderr));
    let rows = metrics_rows(&out_dir);
    assert_eq!(rows[0], "t,ep_sup,ev_sup,eR_sup,ew_sup,eps_p,eps_R,eps_v,eps_w,V_sup");
    assert_eq!(rows.len(), 1 + 6);
    let echoed = std::fs::read_to_string(out_dir.join("config.txt")).unwrap();
    assert!(echoed.contains("seed = 4") && echoed.contains("duration = 0.01"));
    for name in ["report.txt", "snapshots.csv", "plant_000000000.csv", "estimate_000000050.csv"] {
        assert!(out_dir.join(name).exists(), "{name}");
    }
}

#[test]
fn sweep_runs_each_override_list() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("sweep");
    let out = softrod(&[
        "sweep",
        "--out",
        root.to_str().unwrap(),
        "duration=0.004,estimator=off,k_p=2",
        "duration=0.004 estimator=off seed=9",
    ]);
    assert!(out.status.success(), "{}", text(&out.stderr));
    for (i, needle) in [(0, "k_p = 2.0"), (1, "seed = 9")] {
        let run = root.join(format!("run_{i:03}"));
        assert!(std::fs::read_to_string(run.join("config.txt")).unwrap().contains(needle));
        assert!(metrics_rows(&run)[1].contains(",NaN,"), "no filter columns expected");
    }
}

#[test]
fn bad_input_is_an_error() {
    let out = softrod(&["sweep", "--out", "unused", "youngs_modulus=1"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(text(&out.stderr).contains("youngs_modulus"));

    let out = softrod(&["run", "--config", "/nonexistent/run.cfg"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn diverged_run_exits_with_failure_status() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("out");
    let out = softrod(&["run", "--out", out_dir.to_str().unwrap(), "--feedback", "estimated", "--duration", "0.1"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(text(&out.stderr).contains("covariance"));
    let report = std::fs::read_to_string(out_dir.join("report.txt")).unwrap();
    assert!(report.starts_with("status: failed"), "{report}");
}
