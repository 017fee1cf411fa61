//! Error type shared by all modules.

use thiserror::Error;

/// Errors produced by losses, fields, integrators and training drivers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    /// A loss, gradient, field evaluation or integrator state stopped being
    /// finite; usually a sign of a diverging model or flow.
    #[error("non-finite value in {context}")]
    NonFinite { context: &'static str },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("partition required but absent")]
    MissingPartition,

    #[error("partition segments ({head1}, {head2}, {shared}) do not sum to vector length {len}")]
    BadPartition {
        head1: usize,
        head2: usize,
        shared: usize,
        len: usize,
    },

    #[error("matrix is not symmetric (max asymmetry {max_asym:.3e})")]
    NotSymmetric { max_asym: f64 },

    #[error("matrix is not positive semi-definite (min eigenvalue {min_eig:.3e})")]
    NotPsd { min_eig: f64 },

    /// A task loss turned out to depend on the other task's head segment.
    #[error("task loss {task} has a nonzero gradient on the {segment} head segment")]
    ForeignHeadDependence { task: usize, segment: &'static str },

    #[error("integration exceeded {max_steps} steps")]
    MaxStepsExceeded { max_steps: usize },

    #[error("training diverged at step {step}")]
    Diverged { step: usize },

    #[error("pair construction failed after {attempts} attempts: {reason}")]
    ConstructionFailed { attempts: usize, reason: String },
}

pub type Result<T> = std::result::Result<T, Error>;
