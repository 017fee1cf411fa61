//! Builds the concrete losses and starting point named by a configuration.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use driftlab_core::analysis::Setting;
use driftlab_core::autodiff::DynLoss;
use driftlab_core::models::{
    commuting_pair, mlp_multitask_init, mlp_multitask_loss, mlp_single_task_init,
    mlp_single_task_loss, noncommuting_pair, quadratic_loss, MlpSpec, QuadraticSpec,
};
use driftlab_core::optim::TrainingMode;
use driftlab_core::param::{ParamVector, Partition};

use crate::config::{ExperimentConfig, ProblemName, SettingName};
use crate::CliError;

const SALT_START: u64 = 0x57a7;

/// Losses, starting point and run mode for one configured experiment.
pub struct BuiltProblem {
    pub setting: Setting,
    pub mode: TrainingMode,
    pub start: ParamVector,
    /// Whether the task gradient flows commute (fixes the expected band for
    /// the continual corrected flow without the bracket term).
    pub commuting: bool,
    /// Whether the construction guarantees the bracket term dominates the
    /// next-order remainder over the default sweep, certifying the slope-2
    /// no-bracket band.
    pub bracket_dominant: bool,
}

fn unit_norm_start(dim: usize, seed: u64, partition: Option<Partition>) -> ParamVector {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ SALT_START);
    let mut v = DVector::from_fn(dim, |_, _| rng.sample::<f64, _>(StandardNormal));
    let norm = v.norm();
    if norm > 0.0 {
        v /= norm;
    }
    match partition {
        Some(p) => ParamVector::with_partition(v, p).expect("partition matches dimension"),
        None => ParamVector::new(v).expect("finite start"),
    }
}

/// Commutation properties of a task pair, fixed by its construction.
#[derive(Clone, Copy)]
struct PairTraits {
    commuting: bool,
    bracket_dominant: bool,
}

fn assemble(
    setting_name: SettingName,
    l1: DynLoss,
    l2: DynLoss,
    start: ParamVector,
    alpha: f64,
    beta: f64,
    traits: PairTraits,
) -> Result<BuiltProblem, CliError> {
    let (setting, mode) = match setting_name {
        SettingName::Single => (
            Setting::Single { loss: l1.clone() },
            TrainingMode::Single { loss: l1 },
        ),
        SettingName::Multitask => {
            let partition = start.partition().ok_or_else(|| {
                CliError::Config("multitask runs need a partitioned problem".into())
            })?;
            (
                Setting::Multitask {
                    task1: l1.clone(),
                    task2: l2.clone(),
                    alpha,
                    beta,
                    partition,
                },
                TrainingMode::Multitask {
                    task1: l1,
                    task2: l2,
                    alpha,
                    beta,
                },
            )
        }
        SettingName::Continual => (
            Setting::Continual {
                task1: l1.clone(),
                task2: l2.clone(),
            },
            TrainingMode::ContinualAlternating {
                task1: l1,
                task2: l2,
            },
        ),
    };
    Ok(BuiltProblem {
        setting,
        mode,
        start,
        commuting: traits.commuting,
        bracket_dominant: traits.bracket_dominant,
    })
}

pub fn build(config: &ExperimentConfig) -> Result<BuiltProblem, CliError> {
    match config.problem {
        ProblemName::QuadraticCommuting | ProblemName::QuadraticNoncommuting => {
            let commuting = config.problem == ProblemName::QuadraticCommuting;
            let (sa, sb) = if commuting {
                commuting_pair(config.dim, config.seed)?
            } else {
                noncommuting_pair(config.dim, config.seed, config.commutator_scale)?
            };
            let l1: DynLoss = Arc::new(quadratic_loss(sa));
            let l2: DynLoss = Arc::new(quadratic_loss(sb));
            // quadratic pairs share all coordinates: empty heads
            let partition = (config.setting == SettingName::Multitask)
                .then(|| Partition::new(0, 0, config.dim));
            let start = unit_norm_start(config.dim, config.seed, partition);
            assemble(
                config.setting,
                l1,
                l2,
                start,
                config.alpha,
                config.beta,
                PairTraits {
                    commuting,
                    bracket_dominant: !commuting,
                },
            )
        }
        ProblemName::Mlp => {
            let spec = MlpSpec {
                seed: config.seed,
                ..MlpSpec::default()
            };
            if config.setting == SettingName::Single {
                let loss: DynLoss = Arc::new(mlp_single_task_loss(&spec)?);
                let start = mlp_single_task_init(&spec)?;
                return assemble(
                    config.setting,
                    loss.clone(),
                    loss,
                    start,
                    config.alpha,
                    config.beta,
                    PairTraits {
                        commuting: false,
                        bracket_dominant: false,
                    },
                );
            }
            let (l1, l2, _) = mlp_multitask_loss(&spec)?;
            let start = mlp_multitask_init(&spec)?;
            assemble(
                config.setting,
                Arc::new(l1),
                Arc::new(l2),
                start,
                config.alpha,
                config.beta,
                PairTraits {
                    commuting: false,
                    bracket_dominant: false,
                },
            )
        }
        ProblemName::ScalarOpposing => {
            let make = |offset: f64| -> Result<DynLoss, CliError> {
                Ok(Arc::new(quadratic_loss(QuadraticSpec::new(
                    DMatrix::identity(1, 1),
                    DVector::from_element(1, offset),
                )?)))
            };
            let l1 = make(1.0)?; // gradient θ − 1
            let l2 = make(-1.0)?; // gradient θ + 1
            let partition =
                (config.setting == SettingName::Multitask).then(|| Partition::new(0, 0, 1));
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ SALT_START);
            let theta0 = rng.random_range(-0.9..0.9);
            let values = DVector::from_element(1, theta0);
            let start = match partition {
                Some(p) => ParamVector::with_partition(values, p).expect("1-d partition"),
                None => ParamVector::new(values).expect("finite start"),
            };
            assemble(
                config.setting,
                l1,
                l2,
                start,
                config.alpha,
                config.beta,
                PairTraits {
                    commuting: false,
                    bracket_dominant: true,
                },
            )
        }
    }
}
