//! Exactly-controllable test problems: quadratics with prescribed Hessian
//! commutators and a small shared-trunk / two-head network on synthetic data.

pub mod mlp;
pub mod quadratic;

pub use mlp::{
    mlp_multitask_init, mlp_multitask_loss, mlp_single_task_init, mlp_single_task_loss, MlpSpec,
    MlpTaskLoss,
};
pub use quadratic::{
    commuting_pair, multitask_quadratic_pair, noncommuting_pair, quadratic_loss, QuadraticLoss,
    QuadraticSpec,
};
