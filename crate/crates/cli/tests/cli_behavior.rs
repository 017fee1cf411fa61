//! End-to-end behavior of the `driftlab` binary: exit-status contract,
//! config diagnostics, and report files.

use std::path::Path;
use std::process::{Command, Output};

fn driftlab(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_driftlab"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn write(dir: &Path, name: &str, contents: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, contents).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn default_verify_order_passes_with_status_zero() {
    let tmp = tempfile::tempdir().unwrap();
    let out = driftlab(&["verify-order", "--out", "run", "--seed", "7"], tmp.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("plain_gf"));
    assert!(stdout.contains("modified_order1"));
    for file in ["drift.csv", "summary.txt", "config_resolved.txt"] {
        assert!(tmp.path().join("run").join(file).exists(), "missing {file}");
    }
    let summary = std::fs::read_to_string(tmp.path().join("run/summary.txt")).unwrap();
    assert!(summary.contains("overall: PASS"));
    assert!(summary.contains("seed = 7"), "summary embeds resolved config");
}

#[test]
fn continual_noncommuting_without_bracket_expects_slope_two() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(
        tmp.path(),
        "run.cfg",
        "setting = continual\nproblem = quadratic_noncommuting\ninclude_bracket = false\n",
    );
    let out = driftlab(
        &["verify-order", "--config", &cfg, "--out", "run", "--seed", "5"],
        tmp.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary = std::fs::read_to_string(tmp.path().join("run/summary.txt")).unwrap();
    // the corrected flow without the bracket term is held to the 2nd-order band
    assert!(summary.contains("slope_band   = [1.8, 2.2]"));
    assert!(summary.contains("overall: PASS"));
}

#[test]
fn malformed_config_exits_two_and_names_the_key() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "bad.cfg", "setting = single\nh_lst = 0.1,0.2\n");
    let out = driftlab(&["verify-order", "--config", &cfg], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert!(stderr.contains("h_lst"), "diagnostic was: {stderr}");
}

#[test]
fn unparseable_value_exits_two_and_names_the_key() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "bad.cfg", "rel_tol = tiny\n");
    let out = driftlab(&["diagnostics", "--config", &cfg], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8(out.stderr).unwrap().contains("rel_tol"));
}

#[test]
fn missing_config_file_exits_two() {
    let tmp = tempfile::tempdir().unwrap();
    let out = driftlab(
        &["verify-order", "--config", "does-not-exist.cfg"],
        tmp.path(),
    );
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn fixed_step_integrator_also_verifies_orders() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(
        tmp.path(),
        "run.cfg",
        "integrator = rk4_fixed\nsubsteps = 64\n",
    );
    let out = driftlab(
        &["verify-order", "--config", &cfg, "--out", "run", "--seed", "7"],
        tmp.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn seed_flag_overrides_config() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "run.cfg", "seed = 1\nsteps = 5\n");
    for (dir, seed) in [("a", "2"), ("b", "3"), ("c", "2")] {
        let out = driftlab(
            &["diagnostics", "--config", &cfg, "--out", dir, "--seed", seed],
            tmp.path(),
        );
        assert!(out.status.success());
    }
    let read = |d: &str| std::fs::read(tmp.path().join(d).join("trace.csv")).unwrap();
    assert_eq!(read("a"), read("c"));
    assert_ne!(read("a"), read("b"));
    let resolved = std::fs::read_to_string(tmp.path().join("a/config_resolved.txt")).unwrap();
    assert!(resolved.contains("seed = 2"));
}

#[test]
fn selftest_passes_on_fresh_checkout() {
    let tmp = tempfile::tempdir().unwrap();
    let out = driftlab(&["selftest"], tmp.path());
    assert!(out.status.success());
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("11/11 checks passed"), "{stdout}");
}

#[test]
fn injected_fault_exits_one_and_names_the_fd_check() {
    let tmp = tempfile::tempdir().unwrap();
    let out = driftlab(&["selftest", "--inject-fault"], tmp.path());
    assert_eq!(out.status.code(), Some(1));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(
        stdout.contains("gradient-fd-mlp") && stdout.contains("FAIL"),
        "{stdout}"
    );
}

#[test]
fn identical_task_continual_diagnostics_has_vanishing_bracket() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(
        tmp.path(),
        "run.cfg",
        "setting = continual\nproblem = quadratic_commuting\nsteps = 50\n",
    );
    let out = driftlab(
        &["diagnostics", "--config", &cfg, "--out", "run", "--seed", "3"],
        tmp.path(),
    );
    assert!(out.status.success());
    let trace = std::fs::read_to_string(tmp.path().join("run/trace.csv")).unwrap();
    for line in trace.lines().skip(1) {
        let bracket: f64 = line.split(',').next_back().unwrap().parse().unwrap();
        assert!(bracket <= 1e-12, "bracket column {bracket}");
    }
}

#[test]
fn opposing_scalar_multitask_conflict_is_negative() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(
        tmp.path(),
        "run.cfg",
        "setting = multitask\nproblem = scalar_opposing\nsteps = 100\n",
    );
    let out = driftlab(
        &["diagnostics", "--config", &cfg, "--out", "run", "--seed", "11"],
        tmp.path(),
    );
    assert!(out.status.success());
    let trace = std::fs::read_to_string(tmp.path().join("run/trace.csv")).unwrap();
    for line in trace.lines().skip(1) {
        let conflict: f64 = line.split(',').nth(5).unwrap().parse().unwrap();
        assert!(conflict < 0.0, "conflict {conflict} not negative");
    }
}

#[test]
fn mlp_diagnostics_trace_is_finite_throughout() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(
        tmp.path(),
        "run.cfg",
        "setting = multitask\nproblem = mlp\nsteps = 200\n",
    );
    let out = driftlab(
        &["diagnostics", "--config", &cfg, "--out", "run", "--seed", "42"],
        tmp.path(),
    );
    assert!(out.status.success());
    let trace = std::fs::read_to_string(tmp.path().join("run/trace.csv")).unwrap();
    assert_eq!(trace.lines().count(), 201);
    for line in trace.lines().skip(1) {
        for cell in line.split(',') {
            if !cell.is_empty() {
                let v: f64 = cell.parse().unwrap();
                assert!(v.is_finite());
            }
        }
    }
}
