//! End-to-end checks of the command-line interface: exit codes,
//! diagnostics, and byte-stable outputs.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn resfab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_resfab"))
        .args(args)
        .output()
        .expect("binary runs")
}

const SMALL_SCENARIO: &str = "\
core S11 modulus=11
core S13 modulus=13
core S17 modulus=17
core S19 modulus=19
edge E1
edge E2
host VMS1
host VMS2
host VMD1
host VMD2
link VMS1:0 E1:0 capacity=10e9 delay=50e-6 buffer=1000
link VMS2:0 E1:1 capacity=10e9 delay=50e-6 buffer=1000
link E1:2 S11:0 capacity=10e9 delay=50e-6 buffer=1000
link S11:1 S19:1 capacity=930e6 delay=50e-6 buffer=1000
link S11:2 S13:1 capacity=930e6 delay=50e-6 buffer=1000
link S19:0 S17:0 capacity=930e6 delay=50e-6 buffer=1000
link S13:0 S17:1 capacity=930e6 delay=50e-6 buffer=1000
link S17:14 E2:2 capacity=10e9 delay=50e-6 buffer=1000
link E2:0 VMD1:0 capacity=10e9 delay=50e-6 buffer=1000
link E2:1 VMD2:0 capacity=10e9 delay=50e-6 buffer=1000
flow f1 cbr src=VMS1 dst=VMD2 rate_bps=80e6 size=1518 start=0 stop=2
event register flow=f1 path=S11,S19,S17
event migrate flow=f1 at=1 path=S11,S13,S17
duration 2
seed 9
";

#[test]
fn validate_accepts_a_good_scenario() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("good.scn");
    fs::write(&file, SMALL_SCENARIO).unwrap();
    let out = resfab(&["validate", "--scenario", file.to_str().unwrap()]);
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), "ok");
}

#[test]
fn validate_reports_line_numbered_errors_with_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("broken.scn");
    fs::write(
        &file,
        "core S11 modulus=11\nedge E1\nlink S11:13 E1:0 capacity=1e9 delay=0 buffer=4\nduration 1\n",
    )
    .unwrap();
    let out = resfab(&["validate", "--scenario", file.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("line 3"), "stderr: {stderr}");
}

#[test]
fn missing_file_is_a_runtime_error() {
    let out = resfab(&["validate", "--scenario", "/nonexistent/path.scn"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unknown_builtin_fails_validation() {
    let dir = tempfile::tempdir().unwrap();
    let out = resfab(&["builtin", "nope", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn run_twice_with_same_seed_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("small.scn");
    fs::write(&file, SMALL_SCENARIO).unwrap();
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    for out_dir in [&out_a, &out_b] {
        let out = resfab(&[
            "run",
            "--scenario",
            file.to_str().unwrap(),
            "--out",
            out_dir.to_str().unwrap(),
            "--seed",
            "9",
        ]);
        assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    }
    for name in ["throughput.csv", "rtt.csv", "loss.csv", "migrations.csv"] {
        assert_eq!(
            fs::read(out_a.join(name)).unwrap(),
            fs::read(out_b.join(name)).unwrap(),
            "{name} differs"
        );
    }
}

#[test]
fn builtin_run_writes_all_four_csvs() {
    let dir = tempfile::tempdir().unwrap();
    let out = resfab(&[
        "builtin",
        "fig_b_migration",
        "--rate-mbps",
        "800",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    for name in ["throughput.csv", "rtt.csv", "loss.csv", "migrations.csv"] {
        assert!(dir.path().join(name).exists(), "{name} missing");
    }
    let migrations = fs::read_to_string(dir.path().join("migrations.csv")).unwrap();
    let row = migrations.lines().nth(1).expect("one migration row");
    assert!(row.starts_with("50.000000000,f1,133.000000000,728.000000000,"), "row: {row}");
}

#[test]
fn duration_override_shortens_the_run(){
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("small.scn");
    fs::write(&file, SMALL_SCENARIO).unwrap();
    let out = resfab(&[
        "run",
        "--scenario",
        file.to_str().unwrap(),
        "--out",
        dir.path().join("short").to_str().unwrap(),
        "--duration",
        "0.5",
    ]);
    assert!(out.status.success());
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("simulated 0.500s"), "stdout: {stdout}");
    assert!(!migration_rows(dir.path().join("short").as_path()));
}

fn migration_rows(dir: &Path) -> bool {
    fs::read_to_string(dir.join("migrations.csv"))
        .map(|s| s.lines().count() > 1)
        .unwrap_or(false)
}
