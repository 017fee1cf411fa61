//! Drift measurement and convergence-order estimation.
//!
//! For each step size `h`, one discrete update is compared against the chosen
//! flow integrated for time `h` from the same point; the fitted slope of
//! `log(drift)` against `log(h)` is the empirical drift order. Plain flows
//! should fit slope ≈ 2, first-order corrected flows slope ≈ 3, and omitting
//! the bracket term of the continual correction on a noncommuting pair drops
//! the corrected slope back to ≈ 2.

use crate::autodiff::{DynLoss, WeightedSumLoss};
use crate::error::{Error, Result};
use crate::fields::{
    self, descent_field, multitask_conflict, ModifiedFlowSpec, VectorField,
};
use crate::flows::{integrate, IntegratorConfig};
use crate::optim::{joint_multitask_step, sequential_pair_step, sgd_step, TrajectoryTrace};
use crate::param::{ParamVector, Partition};

/// Which flow a discrete update is compared against.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlowKind {
    /// The uncorrected gradient flow of the (combined) loss.
    PlainGf,
    /// The flow carrying the first-order step-size corrections.
    ModifiedOrder1,
}

impl FlowKind {
    pub fn name(&self) -> &'static str {
        match self {
            FlowKind::PlainGf => "plain_gf",
            FlowKind::ModifiedOrder1 => "modified_order1",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SettingKind {
    Single,
    Multitask,
    Continual,
}

impl SettingKind {
    pub fn name(&self) -> &'static str {
        match self {
            SettingKind::Single => "single",
            SettingKind::Multitask => "multitask",
            SettingKind::Continual => "continual",
        }
    }
}

/// A training setting together with its task losses.
pub enum Setting {
    Single {
        loss: DynLoss,
    },
    Multitask {
        task1: DynLoss,
        task2: DynLoss,
        alpha: f64,
        beta: f64,
        partition: Partition,
    },
    Continual {
        task1: DynLoss,
        task2: DynLoss,
    },
}

impl Setting {
    pub fn kind(&self) -> SettingKind {
        match self {
            Setting::Single { .. } => SettingKind::Single,
            Setting::Multitask { .. } => SettingKind::Multitask,
            Setting::Continual { .. } => SettingKind::Continual,
        }
    }
}

/// One (step size, drift) sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DriftRecord {
    pub h: f64,
    pub drift: f64,
    pub flow_kind: FlowKind,
    pub setting: SettingKind,
    pub include_bracket: bool,
    /// Set when the drift sits below the double-precision floor and carries
    /// no order information; flagged, not fatal.
    pub below_floor: bool,
}

/// Least-squares fit of `log(drift)` against `log(h)`.
#[derive(Debug, Clone)]
pub struct OrderFitReport {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub records: Vec<DriftRecord>,
    /// True when too few records sit above the drift floor to fit a slope.
    pub floor_flagged: bool,
}

/// Drift floor: `1e3 · machine epsilon · ‖θ0‖`.
pub const DRIFT_FLOOR_FACTOR: f64 = 1e3;

/// Default sweep: 8 log-spaced step sizes in `[0.0125, 0.2]`, descending.
/// Unit-scale parameters keep the slope-3 drifts well above the floor at the
/// small end while staying in the asymptotic regime at the large end.
pub fn default_h_list() -> Vec<f64> {
    let (h_max, h_min, count) = (0.2f64, 0.0125f64, 8);
    (0..count)
        .map(|i| h_max * (h_min / h_max).powf(i as f64 / (count - 1) as f64))
        .collect()
}

fn plain_flow(setting: &Setting) -> Result<Box<dyn VectorField>> {
    Ok(match setting {
        Setting::Single { loss } => Box::new(descent_field(loss.clone())),
        Setting::Multitask {
            task1,
            task2,
            alpha,
            beta,
            ..
        } => Box::new(descent_field(std::sync::Arc::new(WeightedSumLoss::new(
            task1.clone(),
            *alpha,
            task2.clone(),
            *beta,
        )?))),
        Setting::Continual { task1, task2 } => Box::new(descent_field(std::sync::Arc::new(
            WeightedSumLoss::new(task1.clone(), 1.0, task2.clone(), 1.0)?,
        ))),
    })
}

fn modified_flow(
    setting: &Setting,
    h: f64,
    include_bracket: bool,
) -> Result<Box<dyn VectorField>> {
    match setting {
        Setting::Single { loss } => {
            ModifiedFlowSpec::SingleTask { h }.build(std::slice::from_ref(loss), None)
        }
        Setting::Multitask {
            task1,
            task2,
            alpha,
            beta,
            partition,
        } => ModifiedFlowSpec::Multitask {
            h,
            alpha: *alpha,
            beta: *beta,
        }
        .build(&[task1.clone(), task2.clone()], Some(*partition)),
        Setting::Continual { task1, task2 } => ModifiedFlowSpec::Continual { h, include_bracket }
            .build(&[task1.clone(), task2.clone()], None),
    }
}

/// Runs the setting's discrete rule once with step `h`, integrates the chosen
/// flow for time `h` from the same start, and returns the endpoint gap.
///
/// For the continual setting the discrete rule is the two-update composition
/// and the flow still runs for total time `h`.
pub fn measure_drift(
    setting: &Setting,
    start: &ParamVector,
    h: f64,
    flow_kind: FlowKind,
    include_bracket: bool,
    cfg: &IntegratorConfig,
) -> Result<DriftRecord> {
    if let Setting::Multitask { partition, .. } = setting {
        if start.partition() != Some(*partition) {
            return Err(Error::InvalidParameter(
                "start point layout does not match the multitask partition".into(),
            ));
        }
    }
    let discrete = match setting {
        Setting::Single { loss } => sgd_step(loss.as_ref(), start, h)?,
        Setting::Multitask {
            task1,
            task2,
            alpha,
            beta,
            ..
        } => joint_multitask_step(task1.clone(), task2.clone(), *alpha, *beta, start, h)?,
        Setting::Continual { task1, task2 } => {
            sequential_pair_step(task1.as_ref(), task2.as_ref(), start, h)?.1
        }
    };
    let field = match flow_kind {
        FlowKind::PlainGf => plain_flow(setting)?,
        FlowKind::ModifiedOrder1 => modified_flow(setting, h, include_bracket)?,
    };
    let flow_end = integrate(field.as_ref(), start, h, cfg)?;
    let drift = (flow_end.values() - discrete.values()).norm();
    Ok(DriftRecord {
        h,
        drift,
        flow_kind,
        setting: setting.kind(),
        include_bracket,
        below_floor: drift < DRIFT_FLOOR_FACTOR * f64::EPSILON * start.norm(),
    })
}

/// Measures drift across `h_list` and fits the order.
pub fn order_sweep(
    setting: &Setting,
    start: &ParamVector,
    h_list: &[f64],
    flow_kind: FlowKind,
    include_bracket: bool,
    cfg: &IntegratorConfig,
) -> Result<OrderFitReport> {
    let records = h_list
        .iter()
        .map(|&h| measure_drift(setting, start, h, flow_kind, include_bracket, cfg))
        .collect::<Result<Vec<_>>>()?;
    fit_order(records)
}

/// Fits `log(drift) = slope · log(h) + intercept` over the records sitting
/// above the drift floor. Needs at least 4 distinct step sizes; reports
/// `floor_flagged` (with NaN slope) when fewer than two usable records remain.
pub fn fit_order(records: Vec<DriftRecord>) -> Result<OrderFitReport> {
    let mut hs: Vec<f64> = records.iter().map(|r| r.h).collect();
    hs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    hs.dedup();
    if hs.len() < 4 {
        return Err(Error::InvalidParameter(format!(
            "order fit needs at least 4 distinct step sizes, got {}",
            hs.len()
        )));
    }
    if records.iter().any(|r| !r.h.is_finite() || r.h <= 0.0 || !r.drift.is_finite()) {
        return Err(Error::InvalidParameter(
            "order fit needs positive step sizes and finite drifts".into(),
        ));
    }

    let usable: Vec<(f64, f64)> = records
        .iter()
        .filter(|r| !r.below_floor && r.drift > 0.0)
        .map(|r| (r.h.ln(), r.drift.ln()))
        .collect();
    if usable.len() < 2 {
        return Ok(OrderFitReport {
            slope: f64::NAN,
            intercept: f64::NAN,
            r_squared: f64::NAN,
            records,
            floor_flagged: true,
        });
    }

    let n = usable.len() as f64;
    let mean_x = usable.iter().map(|(x, _)| x).sum::<f64>() / n;
    let mean_y = usable.iter().map(|(_, y)| y).sum::<f64>() / n;
    let sxx: f64 = usable.iter().map(|(x, _)| (x - mean_x).powi(2)).sum();
    let sxy: f64 = usable
        .iter()
        .map(|(x, y)| (x - mean_x) * (y - mean_y))
        .sum();
    let slope = sxy / sxx;
    let intercept = mean_y - slope * mean_x;
    let ss_res: f64 = usable
        .iter()
        .map(|(x, y)| (y - (intercept + slope * x)).powi(2))
        .sum();
    let ss_tot: f64 = usable.iter().map(|(_, y)| (y - mean_y).powi(2)).sum();
    let r_squared = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };

    Ok(OrderFitReport {
        slope,
        intercept,
        r_squared,
        records,
        floor_flagged: false,
    })
}

/// `‖[∇L1, ∇L2]‖` at every recorded point of a run.
pub fn bracket_trace(
    task1: &DynLoss,
    task2: &DynLoss,
    trace: &TrajectoryTrace,
) -> Result<Vec<f64>> {
    trace
        .points
        .iter()
        .map(|p| Ok(fields::gradient_lie_bracket(task1.as_ref(), task2.as_ref(), p)?.norm()))
        .collect()
}

/// `⟨∇_θL1, ∇_θL2⟩` at every recorded point of a run.
pub fn conflict_trace(
    task1: &DynLoss,
    task2: &DynLoss,
    trace: &TrajectoryTrace,
    partition: &Partition,
) -> Result<Vec<f64>> {
    trace
        .points
        .iter()
        .map(|p| multitask_conflict(task1.as_ref(), task2.as_ref(), p, partition))
        .collect()
}
