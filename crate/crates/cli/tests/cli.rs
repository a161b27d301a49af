use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use vespo_core::kernels::phi_vespo;

fn lab(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vespo-lab"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env("VESPO_LAB_THREADS", "2")
        .output()
        .expect("spawn vespo-lab")
}

fn short_run() -> Vec<&'static str> {
    vec!["--set", "train.steps=12", "--set", "train.mbs=16", "--set", "policy.max_len=6"]
}

#[test]
fn kernel_table_has_one_row_per_point() {
    let dir = tempfile::tempdir().unwrap();
    let out = lab(&["kernel-table"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    let text = fs::read_to_string(dir.path().join("kernel_table.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 201);
    assert_eq!(lines[0], vespo_lab::KERNEL_TABLE_HEADER);
    let mut saw_unit = false;
    for line in &lines[1..] {
        let cols: Vec<f64> = line.split(',').map(|c| c.parse().unwrap()).collect();
        let w = cols[0];
        assert_eq!(cols[1], phi_vespo(w.ln(), 2.0, 3.0).unwrap());
        assert_eq!(cols[2], phi_vespo(w.ln(), 3.0, 2.0).unwrap());
        if w == 1.0 {
            saw_unit = true;
            assert_eq!(cols[1], 1.0);
            assert_eq!(cols[2], 1.0);
        }
    }
    assert!(saw_unit);
}

#[test]
fn train_writes_echo_log_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["train"];
    args.extend(short_run());
    let out = lab(&args, dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let echo: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("config.echo.json")).unwrap()).unwrap();
    assert_eq!(echo["subcommand"], "train");
    let log = fs::read_to_string(dir.path().join("train_log.csv")).unwrap();
    assert_eq!(log.lines().count(), 13);
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["steps_completed"], 12);
}

#[test]
fn reruns_produce_identical_logs() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let mut args = vec!["async-train", "--seed", "11"];
    args.extend(short_run());
    assert_eq!(lab(&args, a.path()).status.code(), Some(0));
    assert_eq!(lab(&args, b.path()).status.code(), Some(0));
    let read = |d: &Path| fs::read(d.join("train_log.csv")).unwrap();
    assert_eq!(read(a.path()), read(b.path()));
}

#[test]
fn invalid_config_exits_with_config_code() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.conf");
    fs::write(&path, "[train]\nmethod = vespo\nstaleness_N = 0\n").unwrap();
    let out = lab(&["train", "--config", path.to_str().unwrap()], &dir.path().join("run"));
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("staleness_N"), "{stderr}");
    assert!(stderr.contains("line 3"), "{stderr}");
    assert!(!dir.path().join("run").join("train_log.csv").exists());
}

#[test]
fn unknown_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let out = lab(&["train", "--set", "train.nonsense=1"], dir.path());
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn sweep_runs_every_value() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["sweep", "--axis", "staleness_N", "--values", "1,2,4"];
    args.extend(short_run());
    let out = lab(&args, dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let table = fs::read_to_string(dir.path().join("sweep_summary.csv")).unwrap();
    assert_eq!(table.lines().count(), 4);
    for v in ["1", "2", "4"] {
        assert!(dir.path().join(format!("staleness_N={v}")).join("train_log.csv").is_file());
    }
    let report = lab(&["report"], dir.path());
    assert_eq!(report.status.code(), Some(0));
    assert_eq!(String::from_utf8_lossy(&report.stdout).lines().count(), 4);
}

#[test]
fn verify_kernels_suite_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = lab(&["verify", "--suite", "kernels"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    let report = fs::read_to_string(dir.path().join("verify_report.csv")).unwrap();
    let expected = vespo_core::checks::registry("kernels").unwrap().len();
    assert_eq!(report.lines().count(), expected + 1);
    assert!(report.lines().skip(1).all(|l| l.ends_with(",pass")));
}

#[test]
fn unknown_suite_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(lab(&["verify", "--suite", "nope"], dir.path()).status.code(), Some(1));
}
