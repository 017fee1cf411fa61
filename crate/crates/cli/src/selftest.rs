//! Statically registered invariant suite behind `driftlab selftest`.
//!
//! Each check re-derives one of the library's contracts from an independent
//! route (finite differences, closed forms, exact algebra) on fresh fixtures.
//! The hidden fault-injection switch doubles one gradient coordinate of the
//! MLP backend so tests can prove a broken backend is caught and named.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use driftlab_core::autodiff::{
    self, check_grad_fd, default_fd_step, fd_hvp, DynLoss, ScalarLoss, WeightedSumLoss,
};
use driftlab_core::fields::{
    descent_field, grad_field, lie_bracket, multitask_conflict, multitask_modified_field,
    multitask_modified_loss_value, single_task_modified_field, VectorField,
};
use driftlab_core::flows::{flow_commutator_defect, integrate, IntegratorConfig};
use driftlab_core::models::{
    commuting_pair, mlp_multitask_init, mlp_multitask_loss, noncommuting_pair, quadratic_loss,
};
use driftlab_core::param::{ParamVector, Partition};

/// A loss wrapper whose first gradient coordinate is doubled (test fixture).
struct CorruptedGradient(DynLoss);

impl ScalarLoss for CorruptedGradient {
    fn dimension(&self) -> usize {
        self.0.dimension()
    }
    fn value(&self, point: &ParamVector) -> f64 {
        self.0.value(point)
    }
    fn gradient(&self, point: &ParamVector) -> DVector<f64> {
        let mut g = self.0.gradient(point);
        g[0] *= 2.0;
        g
    }
    fn hvp(&self, point: &ParamVector, dir: &DVector<f64>) -> DVector<f64> {
        self.0.hvp(point, dir)
    }
}

struct Fixture {
    quad: DynLoss,
    quad_point: ParamVector,
    mlp1: DynLoss,
    mlp2: DynLoss,
    mlp_partition: Partition,
    mlp_point: ParamVector,
    cfg: IntegratorConfig,
}

fn fixture(inject_fault: bool) -> Result<Fixture, driftlab_core::Error> {
    let (sa, _) = noncommuting_pair(4, 2024, 0.1)?;
    let quad: DynLoss = Arc::new(quadratic_loss(sa));
    let quad_point = ParamVector::from_slice(&[0.8, -0.5, 0.3, 0.6])?;

    let spec = driftlab_core::models::MlpSpec::default();
    let (l1, l2, partition) = mlp_multitask_loss(&spec)?;
    let mlp1: DynLoss = if inject_fault {
        Arc::new(CorruptedGradient(Arc::new(l1)))
    } else {
        Arc::new(l1)
    };
    Ok(Fixture {
        quad,
        quad_point,
        mlp1,
        mlp2: Arc::new(l2),
        mlp_partition: partition,
        mlp_point: mlp_multitask_init(&spec)?,
        cfg: IntegratorConfig::default(),
    })
}

type Check = (&'static str, fn(&Fixture) -> Result<(), String>);

fn check_bound(name: &str, value: f64, bound: f64) -> Result<(), String> {
    if value <= bound {
        Ok(())
    } else {
        Err(format!("{name} = {value:.3e} exceeds {bound:.1e}"))
    }
}

fn gradient_fd_quadratic(fx: &Fixture) -> Result<(), String> {
    let err = check_grad_fd(fx.quad.as_ref(), &fx.quad_point, default_fd_step(1.0))
        .map_err(|e| e.to_string())?;
    check_bound("max fd error", err, 1e-9)
}

fn gradient_fd_mlp(fx: &Fixture) -> Result<(), String> {
    let err = check_grad_fd(fx.mlp1.as_ref(), &fx.mlp_point, default_fd_step(1.0))
        .map_err(|e| e.to_string())?;
    check_bound("max fd error", err, 1e-5)
}

fn hvp_symmetry(loss: &DynLoss, point: &ParamVector, bound: f64) -> Result<(), String> {
    let n = loss.dimension();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5e1f);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let u = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let v = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let hu = autodiff::hvp(loss.as_ref(), point, &u).map_err(|e| e.to_string())?;
        let hv = autodiff::hvp(loss.as_ref(), point, &v).map_err(|e| e.to_string())?;
        let (a, b) = (u.dot(&hv), v.dot(&hu));
        worst = worst.max((a - b).abs() / a.abs().max(b.abs()).max(1e-30));
    }
    check_bound("max hvp asymmetry", worst, bound)
}

fn hvp_symmetry_quadratic(fx: &Fixture) -> Result<(), String> {
    hvp_symmetry(&fx.quad, &fx.quad_point, 1e-10)
}

fn hvp_symmetry_mlp(fx: &Fixture) -> Result<(), String> {
    hvp_symmetry(&fx.mlp2, &fx.mlp_point, 1e-8)
}

fn hvp_directional_fd(fx: &Fixture) -> Result<(), String> {
    let g = fx.mlp2.gradient(&fx.mlp_point);
    let exact = autodiff::hvp(fx.mlp2.as_ref(), &fx.mlp_point, &g).map_err(|e| e.to_string())?;
    let fd = fd_hvp(fx.mlp2.as_ref(), &fx.mlp_point, &g, default_fd_step(1.0))
        .map_err(|e| e.to_string())?;
    let rel = (&exact - &fd).norm() / exact.norm().max(1e-30);
    check_bound("hvp vs fd directional derivative", rel, 1e-4)
}

fn bracket_antisymmetry(fx: &Fixture) -> Result<(), String> {
    let (sa, sb) = noncommuting_pair(4, 77, 0.1).map_err(|e| e.to_string())?;
    let fa = grad_field(Arc::new(quadratic_loss(sa)));
    let fb = grad_field(Arc::new(quadratic_loss(sb)));
    let fg = lie_bracket(&fa, &fb, &fx.quad_point).map_err(|e| e.to_string())?;
    let gf = lie_bracket(&fb, &fa, &fx.quad_point).map_err(|e| e.to_string())?;
    for i in 0..fg.len() {
        if fg[i] != -gf[i] {
            return Err(format!(
                "coordinate {i}: [F,G] = {:e} but [G,F] = {:e}",
                fg[i], gf[i]
            ));
        }
    }
    Ok(())
}

fn bracket_quadratic_closed_form(fx: &Fixture) -> Result<(), String> {
    let (sa, sb) = noncommuting_pair(4, 78, 0.1).map_err(|e| e.to_string())?;
    let (a, b) = (sa.matrix().clone(), sb.matrix().clone());
    let fa = grad_field(Arc::new(quadratic_loss(sa)));
    let fb = grad_field(Arc::new(quadratic_loss(sb)));
    let bracket = lie_bracket(&fa, &fb, &fx.quad_point).map_err(|e| e.to_string())?;
    let oracle = (&b * &a - &a * &b) * fx.quad_point.values();
    let rel = (&bracket - &oracle).norm() / oracle.norm().max(1e-30);
    check_bound("bracket vs (BA−AB)θ", rel, 1e-12)
}

fn multitask_norm_decomposition(fx: &Fixture) -> Result<(), String> {
    let (alpha, beta) = (0.6, 1.2);
    let combined = WeightedSumLoss::new(fx.mlp1.clone(), alpha, fx.mlp2.clone(), beta)
        .map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(0xdec0);
    let n = fx.mlp_partition.total();
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let omega = ParamVector::with_partition(
            DVector::from_fn(n, |_, _| 0.7 * rng.sample::<f64, _>(StandardNormal)),
            fx.mlp_partition,
        )
        .map_err(|e| e.to_string())?;
        let joint = combined.gradient(&omega).norm_squared();
        let g1 = fx.mlp1.gradient(&omega).norm_squared();
        let g2 = fx.mlp2.gradient(&omega).norm_squared();
        let conflict =
            multitask_conflict(fx.mlp1.as_ref(), fx.mlp2.as_ref(), &omega, &fx.mlp_partition)
                .map_err(|e| e.to_string())?;
        let decomposed = alpha * alpha * g1 + beta * beta * g2 + 2.0 * alpha * beta * conflict;
        worst = worst.max((joint - decomposed).abs() / joint.abs().max(1e-30));
    }
    check_bound("max decomposition residual", worst, 1e-10)
}

fn corrected_field_gradient_consistency(fx: &Fixture) -> Result<(), String> {
    let h = 0.1;
    let step = default_fd_step(1.0);
    // single-task corrected field vs fd gradient of L + (h/4)‖∇L‖²
    let field = single_task_modified_field(fx.quad.clone(), h).map_err(|e| e.to_string())?;
    let eval = field.eval(&fx.quad_point).map_err(|e| e.to_string())?;
    let loss = fx.quad.clone();
    let fd = DVector::from_fn(fx.quad_point.dimension(), |i, _| {
        let scalar = |p: &ParamVector| {
            let (v, g) = loss.value_and_grad(p);
            v + h / 4.0 * g.norm_squared()
        };
        let mut plus = fx.quad_point.values().clone();
        let mut minus = fx.quad_point.values().clone();
        plus[i] += step;
        minus[i] -= step;
        (scalar(&fx.quad_point.map_values(plus)) - scalar(&fx.quad_point.map_values(minus)))
            / (2.0 * step)
    });
    let rel = (&eval + &fd).norm() / eval.norm().max(1e-30);
    check_bound("single-task field vs fd gradient", rel, 1e-5)?;

    // multitask corrected field vs fd gradient of its scalar corrected loss
    let (alpha, beta) = (0.3, 1.7);
    let field = multitask_modified_field(
        fx.mlp1.clone(),
        fx.mlp2.clone(),
        alpha,
        beta,
        h,
        fx.mlp_partition,
    )
    .map_err(|e| e.to_string())?;
    let eval = field.eval(&fx.mlp_point).map_err(|e| e.to_string())?;
    let (l1, l2, partition) = (fx.mlp1.clone(), fx.mlp2.clone(), fx.mlp_partition);
    let fd = DVector::from_fn(fx.mlp_point.dimension(), |i, _| {
        let scalar = |p: &ParamVector| {
            multitask_modified_loss_value(l1.as_ref(), l2.as_ref(), alpha, beta, h, p, &partition)
                .expect("valid multitask instance")
        };
        let mut plus = fx.mlp_point.values().clone();
        let mut minus = fx.mlp_point.values().clone();
        plus[i] += step;
        minus[i] -= step;
        (scalar(&fx.mlp_point.map_values(plus)) - scalar(&fx.mlp_point.map_values(minus)))
            / (2.0 * step)
    });
    let rel = (&eval + &fd).norm() / eval.norm().max(1e-30);
    check_bound("multitask field vs fd gradient", rel, 1e-5)
}

fn commuting_flow_defect(fx: &Fixture) -> Result<(), String> {
    let (sa, sb) = commuting_pair(4, 79).map_err(|e| e.to_string())?;
    let fa = descent_field(Arc::new(quadratic_loss(sa)));
    let fb = descent_field(Arc::new(quadratic_loss(sb)));
    let defect = flow_commutator_defect(&fa, &fb, &fx.quad_point, 0.1, &fx.cfg)
        .map_err(|e| e.to_string())?;
    check_bound(
        "commuting defect",
        defect,
        10.0 * fx.cfg.tolerance_scale(fx.quad_point.norm()),
    )
}

fn integrator_linear_closed_form(fx: &Fixture) -> Result<(), String> {
    let field = driftlab_core::fields::LinearField::new(
        DMatrix::from_diagonal(&DVector::from_column_slice(&[-1.0, -2.0])),
        DVector::zeros(2),
    )
    .map_err(|e| e.to_string())?;
    let start = ParamVector::from_slice(&[1.0, 1.0]).map_err(|e| e.to_string())?;
    let end = integrate(&field, &start, 0.5, &fx.cfg).map_err(|e| e.to_string())?;
    let oracle = DVector::from_column_slice(&[(-0.5f64).exp(), (-1.0f64).exp()]);
    check_bound(
        "integrator vs matrix exponential",
        (end.values() - &oracle).norm() / oracle.norm(),
        1e-9,
    )
}

/// The registered suite: names are stable, the list is never empty.
const CHECKS: &[Check] = &[
    ("gradient-fd-quadratic", gradient_fd_quadratic),
    ("gradient-fd-mlp", gradient_fd_mlp),
    ("hvp-symmetry-quadratic", hvp_symmetry_quadratic),
    ("hvp-symmetry-mlp", hvp_symmetry_mlp),
    ("hvp-directional-fd", hvp_directional_fd),
    ("bracket-antisymmetry", bracket_antisymmetry),
    ("bracket-quadratic-closed-form", bracket_quadratic_closed_form),
    ("multitask-norm-decomposition", multitask_norm_decomposition),
    (
        "corrected-field-gradient-consistency",
        corrected_field_gradient_consistency,
    ),
    ("commuting-flow-defect", commuting_flow_defect),
    ("integrator-linear-closed-form", integrator_linear_closed_form),
];

/// Runs every registered invariant, printing one line per check. Returns
/// whether all passed.
pub fn run_selftest(inject_fault: bool) -> Result<bool, crate::CliError> {
    let fx = fixture(inject_fault)?;
    let mut passed = 0usize;
    for (name, check) in CHECKS {
        match check(&fx) {
            Ok(()) => {
                passed += 1;
                println!("check {name:<38} PASS");
            }
            Err(detail) => println!("check {name:<38} FAIL  {detail}"),
        }
    }
    println!("selftest: {passed}/{} checks passed", CHECKS.len());
    Ok(passed == CHECKS.len())
}
