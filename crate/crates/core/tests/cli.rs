//! End-to-end checks of the installed binary: exit codes, env handling,
//! and CSV output, driven exactly as a shell would.

use std::process::{Command, Output};

fn taskforge(args: &[&str]) -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_taskforge"));
    cmd.args(args)
        .env_remove("TASKFORGE_MASTER_ADDR")
        .env_remove("TASKFORGE_WORKER_ID")
        .env_remove("TASKFORGE_HEARTBEAT_MS")
        .env_remove("TASKFORGE_STATS");
    cmd
}

fn run(args: &[&str]) -> Output {
    taskforge(args).output().expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

#[test]
fn help_and_version_exit_zero() {
    assert_eq!(run(&["--help"]).status.code(), Some(0));
    assert_eq!(run(&["--version"]).status.code(), Some(0));
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    assert_eq!(run(&["frobnicate"]).status.code(), Some(64));
}

#[test]
fn zero_workers_is_a_usage_error() {
    let out = run(&["demo-pi", "--workers", "0"]);
    assert_eq!(out.status.code(), Some(64));
    assert_eq!(run(&["bench-es", "--workers", "0"]).status.code(), Some(64));
}

#[test]
fn worker_without_master_addr_exits_2() {
    let out = run(&["worker"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr).into_owned();
    assert!(err.contains("TASKFORGE_MASTER_ADDR"), "stderr was: {err}");
}

#[test]
fn worker_with_garbled_id_exits_2() {
    let out = taskforge(&["worker"])
        .env("TASKFORGE_MASTER_ADDR", "127.0.0.1:1")
        .env("TASKFORGE_WORKER_ID", "not-a-number")
        .output()
        .expect("binary runs");
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("TASKFORGE_WORKER_ID"));
}

#[test]
fn worker_that_cannot_connect_exits_2() {
    // Port 1 is never listening here.
    let out = taskforge(&["worker"])
        .env("TASKFORGE_MASTER_ADDR", "127.0.0.1:1")
        .env("TASKFORGE_WORKER_ID", "7")
        .output()
        .expect("binary runs");
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn demo_pi_is_indifferent_to_worker_count() {
    let a = run(&["demo-pi", "--sim", "--workers", "2", "--samples", "100000", "--chunks", "10"]);
    let b = run(&["demo-pi", "--sim", "--workers", "5", "--samples", "100000", "--chunks", "10"]);
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(b.status.code(), Some(0));
    let line_a = stdout(&a).lines().next().unwrap().replace("2 workers", "");
    let line_b = stdout(&b).lines().next().unwrap().replace("5 workers", "");
    assert_eq!(line_a, line_b);
    assert!(stdout(&a).contains("sequential check: identical"));
}

#[test]
fn bench_fault_survives_scripted_deaths() {
    let out = run(&[
        "bench-fault", "--sim", "--workers", "4", "--tasks", "40", "--kills", "2",
    ]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let text = stdout(&out);
    assert!(text.contains("completed=40"), "stdout was: {text}");
    assert!(text.contains("poisoned=0"));
}

#[test]
fn bench_es_writes_the_trajectory_csv() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("es.csv");
    let out = run(&[
        "bench-es", "--sequential", "--iterations", "3",
        "--out", path.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0));
    let csv = std::fs::read_to_string(&path).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "iteration,reward,theta_norm");
    assert_eq!(lines.len(), 1 + 3 + 1, "header plus start point plus three iterations");
    assert!(lines[1].starts_with("0,"));
}

#[test]
fn bench_overhead_writes_one_row_per_rep() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("overhead.csv");
    let out = run(&[
        "bench-overhead", "--sim", "--workers", "2", "--durations-ms", "5",
        "--target-ms", "50", "--reps", "2", "--out", path.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(&path).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "duration_ms,workers,batch,ideal_ms,rep,measured_ms,ratio");
    assert_eq!(lines.len(), 3, "header plus two repetitions");
    assert!(lines[1].starts_with("5,2,20,50,0,"));
}
