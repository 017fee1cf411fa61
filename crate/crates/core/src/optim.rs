//! Discrete update rules whose drift against corrected flows is measured.
//!
//! Plain SGD only: no momentum, weight decay, or schedules. The continual
//! driver alternates the two tasks in fixed order with a common step size, so
//! each consecutive update pair is one instance of the two-update analysis.

use crate::autodiff::{self, DynLoss, ScalarLoss, WeightedSumLoss};
use crate::error::{Error, Result};
use crate::fields::{gradient_lie_bracket, multitask_conflict};
use crate::param::ParamVector;

fn check_step(h: f64) -> Result<()> {
    if !h.is_finite() || h <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "step size must be a finite positive number, got {h}"
        )));
    }
    Ok(())
}

/// One SGD step: `θ − h∇L(θ)`.
pub fn sgd_step(loss: &dyn ScalarLoss, point: &ParamVector, h: f64) -> Result<ParamVector> {
    check_step(h)?;
    let g = autodiff::gradient(loss, point)?;
    Ok(point.map_values(point.values() - h * g))
}

/// One SGD step on the weighted joint loss `αL1 + βL2`; identical, including
/// bitwise, to [`sgd_step`] on the combined loss.
pub fn joint_multitask_step(
    task1: DynLoss,
    task2: DynLoss,
    alpha: f64,
    beta: f64,
    omega: &ParamVector,
    h: f64,
) -> Result<ParamVector> {
    if omega.partition().is_none() {
        return Err(Error::MissingPartition);
    }
    let combined = WeightedSumLoss::new(task1, alpha, task2, beta)?;
    sgd_step(&combined, omega, h)
}

/// Two successive SGD steps, task 1 then task 2; returns both the
/// intermediate and the final point.
pub fn sequential_pair_step(
    task1: &dyn ScalarLoss,
    task2: &dyn ScalarLoss,
    start: &ParamVector,
    h: f64,
) -> Result<(ParamVector, ParamVector)> {
    let mid = sgd_step(task1, start, h)?;
    let end = sgd_step(task2, &mid, h)?;
    Ok((mid, end))
}

/// Which update rule a training run repeats.
pub enum TrainingMode {
    Single {
        loss: DynLoss,
    },
    Multitask {
        task1: DynLoss,
        task2: DynLoss,
        alpha: f64,
        beta: f64,
    },
    /// Tasks alternate 1, 2, 1, 2, … with a common step size.
    ContinualAlternating {
        task1: DynLoss,
        task2: DynLoss,
    },
}

/// Diagnostics recorded at the point a step departs from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepDiagnostics {
    pub loss1: f64,
    pub loss2: Option<f64>,
    pub grad_norm1: f64,
    pub grad_norm2: Option<f64>,
    /// `⟨∇_θL1, ∇_θL2⟩` over the shared block (multitask runs).
    pub conflict: Option<f64>,
    /// `‖[∇L1, ∇L2](θ)‖` (continual runs).
    pub bracket_norm: Option<f64>,
}

/// A training run: every visited point plus one diagnostics row per step.
pub struct TrajectoryTrace {
    pub points: Vec<ParamVector>,
    pub diagnostics: Vec<StepDiagnostics>,
    pub seed: u64,
    pub h: f64,
}

impl TrajectoryTrace {
    pub fn steps(&self) -> usize {
        self.diagnostics.len()
    }
}

/// Repeats the mode's update rule `steps` times from `start`, recording the
/// per-step diagnostics. Deterministic; `seed` is carried as metadata so
/// downstream reports can name the run.
pub fn run_training(
    mode: &TrainingMode,
    start: &ParamVector,
    h: f64,
    steps: usize,
    seed: u64,
) -> Result<TrajectoryTrace> {
    check_step(h)?;
    if steps == 0 {
        return Err(Error::InvalidParameter(
            "training needs at least one step".into(),
        ));
    }
    let mut points = Vec::with_capacity(steps + 1);
    let mut diagnostics = Vec::with_capacity(steps);
    let mut current = start.clone();
    points.push(current.clone());

    let diverged = |step: usize| move |e: Error| match e {
        Error::NonFinite { .. } => Error::Diverged { step },
        other => other,
    };

    for step in 0..steps {
        let diag = match mode {
            TrainingMode::Single { loss } => {
                let (v, g) =
                    autodiff::value_and_grad(loss.as_ref(), &current).map_err(diverged(step))?;
                StepDiagnostics {
                    loss1: v,
                    loss2: None,
                    grad_norm1: g.norm(),
                    grad_norm2: None,
                    conflict: None,
                    bracket_norm: None,
                }
            }
            TrainingMode::Multitask { task1, task2, .. } => {
                let partition = current.partition().ok_or(Error::MissingPartition)?;
                let (v1, g1) =
                    autodiff::value_and_grad(task1.as_ref(), &current).map_err(diverged(step))?;
                let (v2, g2) =
                    autodiff::value_and_grad(task2.as_ref(), &current).map_err(diverged(step))?;
                let conflict =
                    multitask_conflict(task1.as_ref(), task2.as_ref(), &current, &partition)?;
                StepDiagnostics {
                    loss1: v1,
                    loss2: Some(v2),
                    grad_norm1: g1.norm(),
                    grad_norm2: Some(g2.norm()),
                    conflict: Some(conflict),
                    bracket_norm: None,
                }
            }
            TrainingMode::ContinualAlternating { task1, task2 } => {
                let (v1, g1) =
                    autodiff::value_and_grad(task1.as_ref(), &current).map_err(diverged(step))?;
                let (v2, g2) =
                    autodiff::value_and_grad(task2.as_ref(), &current).map_err(diverged(step))?;
                let bracket = gradient_lie_bracket(task1.as_ref(), task2.as_ref(), &current)
                    .map_err(diverged(step))?;
                StepDiagnostics {
                    loss1: v1,
                    loss2: Some(v2),
                    grad_norm1: g1.norm(),
                    grad_norm2: Some(g2.norm()),
                    conflict: None,
                    bracket_norm: Some(bracket.norm()),
                }
            }
        };
        diagnostics.push(diag);

        current = match mode {
            TrainingMode::Single { loss } => {
                sgd_step(loss.as_ref(), &current, h).map_err(diverged(step))?
            }
            TrainingMode::Multitask {
                task1,
                task2,
                alpha,
                beta,
            } => joint_multitask_step(task1.clone(), task2.clone(), *alpha, *beta, &current, h)
                .map_err(diverged(step))?,
            TrainingMode::ContinualAlternating { task1, task2 } => {
                let task = if step % 2 == 0 { task1 } else { task2 };
                sgd_step(task.as_ref(), &current, h).map_err(diverged(step))?
            }
        };
        if !current.values().iter().all(|v| v.is_finite()) {
            return Err(Error::Diverged { step });
        }
        points.push(current.clone());
    }

    Ok(TrajectoryTrace {
        points,
        diagnostics,
        seed,
        h,
    })
}
