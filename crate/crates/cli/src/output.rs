//! Deterministic report writers. Runs with identical configuration and seed
//! must produce byte-identical files, so all floats are printed with 17
//! significant digits and all orderings are fixed.

use std::io::Write;
use std::path::Path;

use driftlab_core::analysis::DriftRecord;
use driftlab_core::optim::TrajectoryTrace;

use crate::commands::SweepOutcome;
use crate::CliError;

/// 17 significant digits: round-trips any f64.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_f64).unwrap_or_default()
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    let mut file = std::fs::File::create(path)
        .map_err(|e| CliError::Config(format!("cannot create {}: {e}", path.display())))?;
    file.write_all(contents.as_bytes())
        .map_err(|e| CliError::Config(format!("cannot write {}: {e}", path.display())))
}

pub fn write_resolved_config(dir: &Path, text: &str) -> Result<(), CliError> {
    write_file(&dir.join("config_resolved.txt"), text)
}

pub fn write_drift_csv(dir: &Path, records: &[DriftRecord]) -> Result<(), CliError> {
    let mut out = String::from("setting,flow_kind,include_bracket,h,drift\n");
    for r in records {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.setting.name(),
            r.flow_kind.name(),
            r.include_bracket,
            fmt_f64(r.h),
            fmt_f64(r.drift),
        ));
    }
    write_file(&dir.join("drift.csv"), &out)
}

pub fn write_trace_csv(dir: &Path, trace: &TrajectoryTrace) -> Result<(), CliError> {
    let mut out = String::from("step,loss1,loss2,grad_norm1,grad_norm2,conflict,bracket_norm\n");
    for (step, d) in trace.diagnostics.iter().enumerate() {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            step,
            fmt_f64(d.loss1),
            fmt_opt(d.loss2),
            fmt_f64(d.grad_norm1),
            fmt_opt(d.grad_norm2),
            fmt_opt(d.conflict),
            fmt_opt(d.bracket_norm),
        ));
    }
    write_file(&dir.join("trace.csv"), &out)
}

pub fn write_summary(
    dir: &Path,
    resolved_config: &str,
    sweeps: &[SweepOutcome],
) -> Result<(), CliError> {
    let mut out = String::from("drift-order verification summary\n");
    out.push_str("================================\n\nresolved configuration:\n");
    for line in resolved_config.lines() {
        out.push_str("  ");
        out.push_str(line);
        out.push('\n');
    }
    out.push('\n');
    let mut all_pass = true;
    for s in sweeps {
        all_pass &= s.passed;
        out.push_str(&format!(
            "sweep flow_kind={} include_bracket={}\n",
            s.flow_kind.name(),
            s.include_bracket
        ));
        out.push_str(&format!("  slope        = {}\n", fmt_f64(s.report.slope)));
        out.push_str(&format!(
            "  intercept    = {}\n",
            fmt_f64(s.report.intercept)
        ));
        out.push_str(&format!(
            "  r_squared    = {}\n",
            fmt_f64(s.report.r_squared)
        ));
        match s.band {
            Some((lo, hi)) => {
                out.push_str(&format!("  slope_band   = [{lo}, {hi}]\n"));
                out.push_str(&format!("  r2_min       = {}\n", s.r2_min));
            }
            None => out.push_str("  slope_band   = none (informational sweep)\n"),
        }
        out.push_str(&format!("  floor_flagged = {}\n", s.report.floor_flagged));
        out.push_str(&format!(
            "  result       = {}\n\n",
            if s.passed { "PASS" } else { "FAIL" }
        ));
    }
    out.push_str(&format!(
        "overall: {}\n",
        if all_pass { "PASS" } else { "FAIL" }
    ));
    write_file(&dir.join("summary.txt"), &out)
}
