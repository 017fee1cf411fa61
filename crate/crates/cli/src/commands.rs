//! The `verify-order` and `diagnostics` commands.

use std::path::Path;

use driftlab_core::analysis::{order_sweep, FlowKind, OrderFitReport, SettingKind};
use driftlab_core::optim::run_training;

use crate::config::ExperimentConfig;
use crate::output::{write_drift_csv, write_resolved_config, write_summary, write_trace_csv};
use crate::problems::{build, BuiltProblem};
use crate::CliError;

pub const R2_MIN: f64 = 0.99;

/// One fitted sweep with its acceptance band. A sweep without a band is
/// informational: the slope is reported but not asserted.
pub struct SweepOutcome {
    pub flow_kind: FlowKind,
    pub include_bracket: bool,
    pub report: OrderFitReport,
    pub band: Option<(f64, f64)>,
    pub r2_min: f64,
    pub passed: bool,
}

/// Theoretical drift order band for a sweep: plain flows fit slope 2, fully
/// corrected flows slope 3, and the continual corrected flow without its
/// bracket term drops back to slope 2 when the task flows fail to commute.
///
/// The slope-2 no-bracket band is only asserted when the problem construction
/// guarantees the bracket term dominates the next-order remainder over the
/// whole sweep (`bracket_dominant`). On the mlp preset the bracket at a
/// small-weight init is weak, the sweep sits in the 2–3 crossover, and no
/// band is certified.
pub fn expected_band(
    flow_kind: FlowKind,
    setting: SettingKind,
    include_bracket: bool,
    commuting: bool,
    bracket_dominant: bool,
) -> Option<(f64, f64)> {
    match flow_kind {
        FlowKind::PlainGf => Some((1.8, 2.2)),
        FlowKind::ModifiedOrder1 => match setting {
            SettingKind::Single | SettingKind::Multitask => Some((2.7, 3.3)),
            SettingKind::Continual => {
                if include_bracket || commuting {
                    Some((2.7, 3.3))
                } else if bracket_dominant {
                    Some((1.8, 2.2))
                } else {
                    None
                }
            }
        },
    }
}

fn ensure_out_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir)
        .map_err(|e| CliError::Config(format!("cannot create output dir {}: {e}", dir.display())))
}

/// Sweeps both flow kinds, writes `drift.csv` and `summary.txt`, and reports
/// whether every fitted slope landed in its band with adequate fit quality.
pub fn run_verify_order(config: &ExperimentConfig) -> Result<bool, CliError> {
    ensure_out_dir(&config.out)?;
    let BuiltProblem {
        setting,
        start,
        commuting,
        bracket_dominant,
        ..
    } = build(config)?;

    let mut sweeps = Vec::new();
    let mut all_records = Vec::new();
    for flow_kind in [FlowKind::PlainGf, FlowKind::ModifiedOrder1] {
        let report = order_sweep(
            &setting,
            &start,
            &config.h_list,
            flow_kind,
            config.include_bracket,
            &config.integrator,
        )?;
        let band = expected_band(
            flow_kind,
            setting.kind(),
            config.include_bracket,
            commuting,
            bracket_dominant,
        );
        let passed = match band {
            Some((lo, hi)) => {
                !report.floor_flagged
                    && report.slope >= lo
                    && report.slope <= hi
                    && report.r_squared >= R2_MIN
            }
            None => !report.floor_flagged,
        };
        all_records.extend(report.records.iter().copied());
        sweeps.push(SweepOutcome {
            flow_kind,
            include_bracket: config.include_bracket,
            report,
            band,
            r2_min: R2_MIN,
            passed,
        });
    }

    write_drift_csv(&config.out, &all_records)?;
    let resolved = config.resolved_text();
    write_summary(&config.out, &resolved, &sweeps)?;
    write_resolved_config(&config.out, &resolved)?;

    let all_pass = sweeps.iter().all(|s| s.passed);
    for s in &sweeps {
        let band = match s.band {
            Some((lo, hi)) => format!("band [{lo}, {hi}]"),
            None => "band none (informational)".to_string(),
        };
        println!(
            "verify-order {} {} include_bracket={}: slope {:.4} r2 {:.6} {} {}",
            setting.kind().name(),
            s.flow_kind.name(),
            s.include_bracket,
            s.report.slope,
            s.report.r_squared,
            band,
            if s.passed { "PASS" } else { "FAIL" }
        );
    }
    Ok(all_pass)
}

/// Runs training in the configured mode and writes the per-step trace CSV.
pub fn run_diagnostics(config: &ExperimentConfig) -> Result<(), CliError> {
    ensure_out_dir(&config.out)?;
    let BuiltProblem { mode, start, .. } = build(config)?;
    let trace = run_training(&mode, &start, config.h, config.steps, config.seed)?;
    write_trace_csv(&config.out, &trace)?;
    write_resolved_config(&config.out, &config.resolved_text())?;
    println!(
        "diagnostics {}: {} steps written to {}",
        config.setting.as_str(),
        trace.steps(),
        config.out.join("trace.csv").display()
    );
    Ok(())
}
