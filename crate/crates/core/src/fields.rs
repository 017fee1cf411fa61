//! Vector-field algebra: gradient fields, the Lie bracket, and the corrected
//! right-hand sides that discrete SGD updates follow to higher order.
//!
//! Sign convention: [`grad_field`] returns the raw gradient `∇L`; descent
//! dynamics negate it explicitly. Since `[F, G] = [−F, −G]`, brackets of raw
//! gradient fields equal brackets of the corresponding descent fields.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{self, DynLoss, ScalarLoss};
use crate::error::{Error, Result};
use crate::param::{ParamVector, Partition};

/// A map from parameter space to itself, with a Jacobian-vector product.
pub trait VectorField: Send + Sync {
    fn dimension(&self) -> usize;

    fn eval(&self, point: &ParamVector) -> Result<DVector<f64>>;

    /// Jacobian-vector product `∇F(point) · dir`.
    ///
    /// The default is a second-order central difference of `eval`; fields
    /// with an exact Jacobian oracle (gradient fields, linear fields)
    /// override it. No production code path relies on the default — brackets
    /// are only ever taken of gradient fields — but it keeps every field
    /// probeable by the validators.
    fn jvp(&self, point: &ParamVector, dir: &DVector<f64>) -> Result<DVector<f64>> {
        if dir.len() != self.dimension() {
            return Err(Error::DimensionMismatch {
                expected: self.dimension(),
                got: dir.len(),
            });
        }
        let dir_norm = dir.norm();
        if dir_norm == 0.0 {
            return Ok(DVector::zeros(self.dimension()));
        }
        let step = f64::EPSILON.cbrt() * (1.0 + point.norm()) / dir_norm;
        let plus = self.eval(&point.map_values(point.values() + step * dir))?;
        let minus = self.eval(&point.map_values(point.values() - step * dir))?;
        Ok((plus - minus) / (2.0 * step))
    }
}

fn check_point(field: &dyn VectorField, point: &ParamVector) -> Result<()> {
    if field.dimension() != point.dimension() {
        return Err(Error::DimensionMismatch {
            expected: field.dimension(),
            got: point.dimension(),
        });
    }
    Ok(())
}

/// The raw gradient field `θ ↦ ∇L(θ)`; its Jacobian is the Hessian.
pub struct GradField {
    loss: DynLoss,
}

pub fn grad_field(loss: DynLoss) -> GradField {
    GradField { loss }
}

impl VectorField for GradField {
    fn dimension(&self) -> usize {
        self.loss.dimension()
    }

    fn eval(&self, point: &ParamVector) -> Result<DVector<f64>> {
        autodiff::gradient(self.loss.as_ref(), point)
    }

    fn jvp(&self, point: &ParamVector, dir: &DVector<f64>) -> Result<DVector<f64>> {
        autodiff::hvp(self.loss.as_ref(), point, dir)
    }
}

/// The steepest-descent field `θ ↦ −∇L(θ)`.
pub struct DescentField {
    loss: DynLoss,
}

pub fn descent_field(loss: DynLoss) -> DescentField {
    DescentField { loss }
}

impl VectorField for DescentField {
    fn dimension(&self) -> usize {
        self.loss.dimension()
    }

    fn eval(&self, point: &ParamVector) -> Result<DVector<f64>> {
        Ok(-autodiff::gradient(self.loss.as_ref(), point)?)
    }

    fn jvp(&self, point: &ParamVector, dir: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(-autodiff::hvp(self.loss.as_ref(), point, dir)?)
    }
}

/// Affine field `θ ↦ Aθ + c` with exact Jacobian `A`; closed-form reference
/// for linear-flow tests.
pub struct LinearField {
    matrix: DMatrix<f64>,
    offset: DVector<f64>,
}

impl LinearField {
    pub fn new(matrix: DMatrix<f64>, offset: DVector<f64>) -> Result<Self> {
        if matrix.nrows() != matrix.ncols() || matrix.nrows() != offset.len() {
            return Err(Error::InvalidParameter(
                "linear field needs a square matrix and matching offset".into(),
            ));
        }
        Ok(LinearField { matrix, offset })
    }
}

impl VectorField for LinearField {
    fn dimension(&self) -> usize {
        self.matrix.nrows()
    }

    fn eval(&self, point: &ParamVector) -> Result<DVector<f64>> {
        check_point(self, point)?;
        Ok(&self.matrix * point.values() + &self.offset)
    }

    fn jvp(&self, _point: &ParamVector, dir: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(&self.matrix * dir)
    }
}

/// Lie bracket `[F, G](θ) = ∇G(θ)F(θ) − ∇F(θ)G(θ)`.
pub fn lie_bracket(
    f: &dyn VectorField,
    g: &dyn VectorField,
    point: &ParamVector,
) -> Result<DVector<f64>> {
    if f.dimension() != g.dimension() {
        return Err(Error::DimensionMismatch {
            expected: f.dimension(),
            got: g.dimension(),
        });
    }
    check_point(f, point)?;
    let fv = f.eval(point)?;
    let gv = g.eval(point)?;
    Ok(g.jvp(point, &fv)? - f.jvp(point, &gv)?)
}

/// `[∇L1, ∇L2](θ) = H₂(θ)∇L1(θ) − H₁(θ)∇L2(θ)`, the bracket of two gradient
/// fields computed directly from the loss oracles.
pub fn gradient_lie_bracket(
    l1: &dyn ScalarLoss,
    l2: &dyn ScalarLoss,
    point: &ParamVector,
) -> Result<DVector<f64>> {
    let g1 = autodiff::gradient(l1, point)?;
    let g2 = autodiff::gradient(l2, point)?;
    Ok(autodiff::hvp(l2, point, &g1)? - autodiff::hvp(l1, point, &g2)?)
}

/// Gradient of the flatness penalty: `∇(¼‖∇L(θ)‖²) = ½ H(θ)∇L(θ)`.
/// One gradient and one Hessian-vector product.
pub fn igr_grad(loss: &dyn ScalarLoss, point: &ParamVector) -> Result<DVector<f64>> {
    let g = autodiff::gradient(loss, point)?;
    Ok(autodiff::hvp(loss, point, &g)? * 0.5)
}

fn check_rate(h: f64) -> Result<()> {
    if !h.is_finite() || h < 0.0 {
        return Err(Error::InvalidParameter(format!(
            "learning rate must be a finite nonnegative number, got {h}"
        )));
    }
    Ok(())
}

fn check_weight(name: &str, w: f64) -> Result<()> {
    if !w.is_finite() || w < 0.0 {
        return Err(Error::InvalidParameter(format!(
            "{name} must be a finite nonnegative number, got {w}"
        )));
    }
    Ok(())
}

/// Probes that each task loss ignores the other task's head segment: the
/// foreign-head gradient block must vanish at a handful of seeded points.
pub fn check_task_independence(
    l1: &dyn ScalarLoss,
    l2: &dyn ScalarLoss,
    partition: &Partition,
) -> Result<()> {
    let n = partition.total();
    if l1.dimension() != n || l2.dimension() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: if l1.dimension() != n {
                l1.dimension()
            } else {
                l2.dimension()
            },
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x7a5c_ad1f);
    for _ in 0..3 {
        let point =
            ParamVector::new(DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0)))?;
        let g1 = autodiff::gradient(l1, &point)?;
        let g2 = autodiff::gradient(l2, &point)?;
        let tol1 = 1e-12 * g1.amax().max(1.0);
        let tol2 = 1e-12 * g2.amax().max(1.0);
        if partition.head2_range().any(|i| g1[i].abs() > tol1) {
            return Err(Error::ForeignHeadDependence {
                task: 1,
                segment: "second",
            });
        }
        if partition.head1_range().any(|i| g2[i].abs() > tol2) {
            return Err(Error::ForeignHeadDependence {
                task: 2,
                segment: "first",
            });
        }
    }
    Ok(())
}

/// Field of the corrected single-task flow:
/// `−∇(L + (h/4)‖∇L‖²) = −∇L(θ) − (h/2) H(θ)∇L(θ)`.
pub struct SingleTaskModifiedField {
    loss: DynLoss,
    h: f64,
}

pub fn single_task_modified_field(loss: DynLoss, h: f64) -> Result<SingleTaskModifiedField> {
    check_rate(h)?;
    Ok(SingleTaskModifiedField { loss, h })
}

impl VectorField for SingleTaskModifiedField {
    fn dimension(&self) -> usize {
        self.loss.dimension()
    }

    fn eval(&self, point: &ParamVector) -> Result<DVector<f64>> {
        let g = autodiff::gradient(self.loss.as_ref(), point)?;
        let hg = autodiff::hvp(self.loss.as_ref(), point, &g)?;
        Ok(-g - (self.h * 0.5) * hg)
    }
}

/// Field of the corrected joint two-task flow: the negative gradient of
/// `αL1 + βL2 + (hα²/4)‖∇L1‖² + (hβ²/4)‖∇L2‖² + (hαβ/2)⟨∇_θL1, ∇_θL2⟩`.
///
/// The conflict-term gradient is assembled from two Hessian-vector products
/// with shared-block-embedded directions; no Jacobian is ever materialized.
pub struct MultitaskModifiedField {
    task1: DynLoss,
    task2: DynLoss,
    alpha: f64,
    beta: f64,
    h: f64,
    partition: Partition,
}

pub fn multitask_modified_field(
    task1: DynLoss,
    task2: DynLoss,
    alpha: f64,
    beta: f64,
    h: f64,
    partition: Partition,
) -> Result<MultitaskModifiedField> {
    check_rate(h)?;
    check_weight("alpha", alpha)?;
    check_weight("beta", beta)?;
    check_task_independence(task1.as_ref(), task2.as_ref(), &partition)?;
    Ok(MultitaskModifiedField {
        task1,
        task2,
        alpha,
        beta,
        h,
        partition,
    })
}

impl VectorField for MultitaskModifiedField {
    fn dimension(&self) -> usize {
        self.partition.total()
    }

    fn eval(&self, point: &ParamVector) -> Result<DVector<f64>> {
        check_point(self, point)?;
        let (l1, l2) = (self.task1.as_ref(), self.task2.as_ref());
        let g1 = autodiff::gradient(l1, point)?;
        let g2 = autodiff::gradient(l2, point)?;
        let igr1 = autodiff::hvp(l1, point, &g1)? * 0.5;
        let igr2 = autodiff::hvp(l2, point, &g2)? * 0.5;
        let embed2 = self.partition.embed_shared(&self.partition.shared_block(&g2));
        let embed1 = self.partition.embed_shared(&self.partition.shared_block(&g1));
        let conflict_grad =
            autodiff::hvp(l1, point, &embed2)? + autodiff::hvp(l2, point, &embed1)?;
        let (a, b, h) = (self.alpha, self.beta, self.h);
        Ok(-(a * g1 + b * g2)
            - (h * a * a) * igr1
            - (h * b * b) * igr2
            - (h * a * b * 0.5) * conflict_grad)
    }
}

/// Value of the corrected joint two-task loss at `point`.
pub fn multitask_modified_loss_value(
    l1: &dyn ScalarLoss,
    l2: &dyn ScalarLoss,
    alpha: f64,
    beta: f64,
    h: f64,
    point: &ParamVector,
    partition: &Partition,
) -> Result<f64> {
    check_rate(h)?;
    check_weight("alpha", alpha)?;
    check_weight("beta", beta)?;
    check_task_independence(l1, l2, partition)?;
    let (v1, g1) = autodiff::value_and_grad(l1, point)?;
    let (v2, g2) = autodiff::value_and_grad(l2, point)?;
    // ‖∇L1‖² restricted to (φ1, θ); the φ2 block is structurally zero anyway.
    let own1: f64 = partition
        .head1_range()
        .chain(partition.shared_range())
        .map(|i| g1[i] * g1[i])
        .sum();
    let own2: f64 = partition
        .head2_range()
        .chain(partition.shared_range())
        .map(|i| g2[i] * g2[i])
        .sum();
    let conflict = partition
        .shared_block(&g1)
        .dot(&partition.shared_block(&g2));
    Ok(alpha * v1
        + beta * v2
        + h * alpha * alpha / 4.0 * own1
        + h * beta * beta / 4.0 * own2
        + h * alpha * beta / 2.0 * conflict)
}

/// Inner product of the shared-block gradients, `⟨∇_θL1, ∇_θL2⟩`. Negative
/// values mean the tasks pull the shared parameters in opposing directions.
pub fn multitask_conflict(
    l1: &dyn ScalarLoss,
    l2: &dyn ScalarLoss,
    point: &ParamVector,
    partition: &Partition,
) -> Result<f64> {
    if partition.total() != point.dimension() {
        return Err(Error::DimensionMismatch {
            expected: partition.total(),
            got: point.dimension(),
        });
    }
    let g1 = autodiff::gradient(l1, point)?;
    let g2 = autodiff::gradient(l2, point)?;
    Ok(partition
        .shared_block(&g1)
        .dot(&partition.shared_block(&g2)))
}

/// Field of the corrected two-update (continual) flow:
/// `−∇L1 − ∇L2 − h(∇(¼‖∇L1‖²) + ∇(¼‖∇L2‖²)) + (h/2)[∇L1, ∇L2]`.
///
/// The bracket term is not a gradient; switching it off isolates its
/// contribution to the drift order.
pub struct ContinualModifiedField {
    task1: DynLoss,
    task2: DynLoss,
    h: f64,
    include_bracket: bool,
}

pub fn continual_modified_field(
    task1: DynLoss,
    task2: DynLoss,
    h: f64,
    include_bracket: bool,
) -> Result<ContinualModifiedField> {
    check_rate(h)?;
    if task1.dimension() != task2.dimension() {
        return Err(Error::DimensionMismatch {
            expected: task1.dimension(),
            got: task2.dimension(),
        });
    }
    Ok(ContinualModifiedField {
        task1,
        task2,
        h,
        include_bracket,
    })
}

impl VectorField for ContinualModifiedField {
    fn dimension(&self) -> usize {
        self.task1.dimension()
    }

    fn eval(&self, point: &ParamVector) -> Result<DVector<f64>> {
        check_point(self, point)?;
        let (l1, l2) = (self.task1.as_ref(), self.task2.as_ref());
        let g1 = autodiff::gradient(l1, point)?;
        let g2 = autodiff::gradient(l2, point)?;
        let igr1 = autodiff::hvp(l1, point, &g1)? * 0.5;
        let igr2 = autodiff::hvp(l2, point, &g2)? * 0.5;
        let mut out = -(&g1 + &g2) - self.h * (igr1 + igr2);
        if self.include_bracket {
            let bracket = autodiff::hvp(l2, point, &g1)? - autodiff::hvp(l1, point, &g2)?;
            out += (self.h * 0.5) * bracket;
        }
        Ok(out)
    }
}

/// Which corrected flow to build, with its step-size parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ModifiedFlowSpec {
    SingleTask { h: f64 },
    Multitask { h: f64, alpha: f64, beta: f64 },
    Continual { h: f64, include_bracket: bool },
}

impl ModifiedFlowSpec {
    pub fn learning_rate(&self) -> f64 {
        match *self {
            ModifiedFlowSpec::SingleTask { h } => h,
            ModifiedFlowSpec::Multitask { h, .. } => h,
            ModifiedFlowSpec::Continual { h, .. } => h,
        }
    }

    /// Builds the corrected field over the given task losses. Single-task
    /// expects one loss; the two-task settings expect two, and the joint
    /// multitask setting also needs the segment layout.
    pub fn build(
        &self,
        tasks: &[DynLoss],
        partition: Option<Partition>,
    ) -> Result<Box<dyn VectorField>> {
        match *self {
            ModifiedFlowSpec::SingleTask { h } => {
                let [loss] = tasks else {
                    return Err(Error::InvalidParameter(format!(
                        "single-task flow takes exactly one loss, got {}",
                        tasks.len()
                    )));
                };
                Ok(Box::new(single_task_modified_field(loss.clone(), h)?))
            }
            ModifiedFlowSpec::Multitask { h, alpha, beta } => {
                let [l1, l2] = tasks else {
                    return Err(Error::InvalidParameter(format!(
                        "multitask flow takes exactly two losses, got {}",
                        tasks.len()
                    )));
                };
                let partition = partition.ok_or(Error::MissingPartition)?;
                Ok(Box::new(multitask_modified_field(
                    l1.clone(),
                    l2.clone(),
                    alpha,
                    beta,
                    h,
                    partition,
                )?))
            }
            ModifiedFlowSpec::Continual { h, include_bracket } => {
                let [l1, l2] = tasks else {
                    return Err(Error::InvalidParameter(format!(
                        "continual flow takes exactly two losses, got {}",
                        tasks.len()
                    )));
                };
                Ok(Box::new(continual_modified_field(
                    l1.clone(),
                    l2.clone(),
                    h,
                    include_bracket,
                )?))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::quadratic::{
        commuting_pair, noncommuting_pair, quadratic_loss, QuadraticSpec,
    };
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand_distr::StandardNormal;
    use std::sync::Arc;

    /// Unchecked symmetric quadratic ½θᵀMθ, for Hessians the PSD-validated
    /// model constructor would reject.
    struct SymQuadratic(DMatrix<f64>);

    impl ScalarLoss for SymQuadratic {
        fn dimension(&self) -> usize {
            self.0.nrows()
        }
        fn value(&self, point: &ParamVector) -> f64 {
            0.5 * point.values().dot(&(&self.0 * point.values()))
        }
        fn gradient(&self, point: &ParamVector) -> DVector<f64> {
            &self.0 * point.values()
        }
        fn hvp(&self, _point: &ParamVector, dir: &DVector<f64>) -> DVector<f64> {
            &self.0 * dir
        }
    }

    /// 1-D loss ½(θ − c)², constant term included.
    struct ShiftedQuadratic {
        center: f64,
    }

    impl ScalarLoss for ShiftedQuadratic {
        fn dimension(&self) -> usize {
            1
        }
        fn value(&self, point: &ParamVector) -> f64 {
            let d = point.values()[0] - self.center;
            0.5 * d * d
        }
        fn gradient(&self, point: &ParamVector) -> DVector<f64> {
            DVector::from_element(1, point.values()[0] - self.center)
        }
        fn hvp(&self, _point: &ParamVector, dir: &DVector<f64>) -> DVector<f64> {
            dir.clone()
        }
    }

    fn quad(matrix: DMatrix<f64>) -> DynLoss {
        let n = matrix.nrows();
        Arc::new(quadratic_loss(
            QuadraticSpec::new(matrix, DVector::zeros(n)).unwrap(),
        ))
    }

    fn unit_1d() -> DynLoss {
        quad(DMatrix::identity(1, 1))
    }

    fn random_point(n: usize, seed: u64) -> ParamVector {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ParamVector::new(DVector::from_fn(n, |_, _| {
            rng.sample::<f64, _>(StandardNormal)
        }))
        .unwrap()
    }

    /// Central FD gradient of an arbitrary scalar map (test oracle).
    fn fd_grad_of(f: impl Fn(&ParamVector) -> f64, point: &ParamVector, step: f64) -> DVector<f64> {
        let n = point.dimension();
        DVector::from_fn(n, |i, _| {
            let mut plus = point.values().clone();
            let mut minus = point.values().clone();
            plus[i] += step;
            minus[i] -= step;
            (f(&point.map_values(plus)) - f(&point.map_values(minus))) / (2.0 * step)
        })
    }

    #[test]
    fn grad_field_of_quadratic_is_linear() {
        let a = DMatrix::from_diagonal(&DVector::from_column_slice(&[1.0, 2.0]));
        let field = grad_field(quad(a.clone()));
        let p = ParamVector::from_slice(&[1.0, -3.0]).unwrap();
        assert_eq!(field.eval(&p).unwrap(), &a * p.values());
        let v = DVector::from_column_slice(&[0.5, 0.5]);
        assert_eq!(field.jvp(&p, &v).unwrap(), &a * &v);
    }

    #[test]
    fn grad_field_of_constant_loss_is_zero() {
        let field = grad_field(quad(DMatrix::zeros(3, 3)));
        let p = random_point(3, 1);
        assert_eq!(field.eval(&p).unwrap(), DVector::zeros(3));
    }

    #[test]
    fn bracket_of_field_with_itself_vanishes() {
        let f = grad_field(quad(DMatrix::from_diagonal(&DVector::from_column_slice(&[
            1.0, 2.0, 0.5,
        ]))));
        let p = random_point(3, 2);
        assert_eq!(lie_bracket(&f, &f, &p).unwrap(), DVector::zeros(3));
    }

    #[test]
    fn bracket_matches_hand_computed_example() {
        // A = diag(1,2), B = [[0,1],[1,0]], θ = (1,1): B(Aθ) − A(Bθ) = (1,−1)
        let a = DMatrix::from_diagonal(&DVector::from_column_slice(&[1.0, 2.0]));
        let b = DMatrix::from_column_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        let fa = grad_field(Arc::new(SymQuadratic(a.clone())));
        let fb = grad_field(Arc::new(SymQuadratic(b.clone())));
        let p = ParamVector::from_slice(&[1.0, 1.0]).unwrap();
        let bracket = lie_bracket(&fa, &fb, &p).unwrap();
        assert_relative_eq!(bracket, DVector::from_column_slice(&[1.0, -1.0]), epsilon = 1e-14);
        // closed form (BA − AB)θ via explicit matrix arithmetic
        let oracle = (&b * &a - &a * &b) * p.values();
        assert_relative_eq!(bracket, oracle, epsilon = 1e-14);
    }

    #[test]
    fn bracket_of_commuting_pair_vanishes() {
        let (sa, sb) = commuting_pair(4, 8).unwrap();
        let fa = grad_field(Arc::new(quadratic_loss(sa)));
        let fb = grad_field(Arc::new(quadratic_loss(sb)));
        for seed in 0..5 {
            let p = random_point(4, seed);
            let norm = lie_bracket(&fa, &fb, &p).unwrap().norm();
            assert!(norm <= 1e-12 * p.norm().max(1.0), "bracket norm {norm}");
        }
    }

    #[test]
    fn gradient_bracket_agrees_with_field_bracket() {
        let (sa, sb) = noncommuting_pair(4, 21, 0.1).unwrap();
        let l1: DynLoss = Arc::new(quadratic_loss(sa));
        let l2: DynLoss = Arc::new(quadratic_loss(sb));
        let p = random_point(4, 3);
        let via_fields =
            lie_bracket(&grad_field(l1.clone()), &grad_field(l2.clone()), &p).unwrap();
        let direct = gradient_lie_bracket(l1.as_ref(), l2.as_ref(), &p).unwrap();
        assert_relative_eq!(via_fields, direct, epsilon = 1e-14);
    }

    #[test]
    fn igr_grad_scalar_example() {
        // L = ½θ², θ = 2: ∇(¼‖∇L‖²) = θ/2 = 1
        let p = ParamVector::from_slice(&[2.0]).unwrap();
        let g = igr_grad(unit_1d().as_ref(), &p).unwrap();
        assert_eq!(g[0], 1.0);
    }

    #[test]
    fn igr_grad_quadratic_closed_form() {
        let a = DMatrix::from_column_slice(2, 2, &[1.0, 0.3, 0.3, 2.0]);
        let loss = quad(a.clone());
        let p = random_point(2, 4);
        let g = igr_grad(loss.as_ref(), &p).unwrap();
        let oracle = 0.5 * (&a * (&a * p.values()));
        assert_relative_eq!(g, oracle, max_relative = 1e-13);
    }

    #[test]
    fn single_task_modified_field_scalar_example() {
        // L = ½θ², h = 0.1, θ = 1 → −(θ + (h/2)θ) = −1.05
        let field = single_task_modified_field(unit_1d(), 0.1).unwrap();
        let p = ParamVector::from_slice(&[1.0]).unwrap();
        assert_relative_eq!(field.eval(&p).unwrap()[0], -1.05, max_relative = 1e-15);
    }

    #[test]
    fn single_task_modified_field_degenerates_at_zero_rate() {
        let loss = quad(DMatrix::from_diagonal(&DVector::from_column_slice(&[
            1.0, 2.0,
        ])));
        let field = single_task_modified_field(loss.clone(), 0.0).unwrap();
        let p = random_point(2, 5);
        let descent = descent_field(loss);
        assert_eq!(field.eval(&p).unwrap(), descent.eval(&p).unwrap());
        assert!(single_task_modified_field(unit_1d(), -0.1).is_err());
    }

    #[test]
    fn single_task_modified_field_quadratic_closed_form() {
        let a = DMatrix::from_column_slice(2, 2, &[1.0, 0.4, 0.4, 1.5]);
        let h = 0.05;
        let field = single_task_modified_field(quad(a.clone()), h).unwrap();
        let closed = LinearField::new(-(&a + (h / 2.0) * (&a * &a)), DVector::zeros(2)).unwrap();
        let p = random_point(2, 6);
        assert_relative_eq!(
            field.eval(&p).unwrap(),
            closed.eval(&p).unwrap(),
            max_relative = 1e-13
        );
    }

    #[test]
    fn multitask_field_reduces_to_single_task_on_identical_tasks() {
        let a = DMatrix::from_column_slice(3, 3, &[2.0, 0.2, 0.0, 0.2, 1.0, 0.3, 0.0, 0.3, 1.5]);
        let l: DynLoss = quad(a.clone());
        let doubled: DynLoss = Arc::new(
            crate::autodiff::WeightedSumLoss::new(l.clone(), 1.0, l.clone(), 1.0).unwrap(),
        );
        let h = 0.07;
        let partition = Partition::new(0, 0, 3);
        let multi =
            multitask_modified_field(l.clone(), l.clone(), 1.0, 1.0, h, partition).unwrap();
        let single = single_task_modified_field(doubled, h).unwrap();
        for seed in 0..5 {
            let p = random_point(3, seed);
            let diff = (multi.eval(&p).unwrap() - single.eval(&p).unwrap()).norm();
            assert!(diff <= 1e-12, "difference {diff}");
        }
    }

    #[test]
    fn multitask_field_at_zero_rate_is_plain_descent() {
        let (l1, l2, partition) =
            crate::models::quadratic::multitask_quadratic_pair(2, 2, 3, 9).unwrap();
        let (l1, l2): (DynLoss, DynLoss) = (Arc::new(l1), Arc::new(l2));
        let (alpha, beta) = (0.4, 1.3);
        let field =
            multitask_modified_field(l1.clone(), l2.clone(), alpha, beta, 0.0, partition).unwrap();
        let combined: DynLoss =
            Arc::new(crate::autodiff::WeightedSumLoss::new(l1, alpha, l2, beta).unwrap());
        let plain = descent_field(combined);
        let p = random_point(partition.total(), 10);
        assert_relative_eq!(
            field.eval(&p).unwrap(),
            plain.eval(&p).unwrap(),
            epsilon = 1e-15
        );
    }

    #[test]
    fn multitask_modified_loss_hand_value() {
        // shared scalar θ, no heads, L1 = ½(θ−1)², L2 = ½(θ+1)², α = β = 1,
        // h = 0.1, θ = 0 → 0.5 + 0.5 + 0.025 + 0.025 − 0.05 = 1.0
        let l1 = ShiftedQuadratic { center: 1.0 };
        let l2 = ShiftedQuadratic { center: -1.0 };
        let partition = Partition::new(0, 0, 1);
        let p = ParamVector::from_slice(&[0.0]).unwrap();
        let v = multitask_modified_loss_value(&l1, &l2, 1.0, 1.0, 0.1, &p, &partition).unwrap();
        assert_relative_eq!(v, 1.0, max_relative = 1e-15);
        // h = 0 degenerates to αL1 + βL2
        let v0 = multitask_modified_loss_value(&l1, &l2, 1.0, 1.0, 0.0, &p, &partition).unwrap();
        assert_relative_eq!(v0, 1.0, max_relative = 1e-15);
    }

    #[test]
    fn multitask_field_is_negative_fd_gradient_of_modified_loss() {
        let l1: DynLoss = Arc::new(ShiftedQuadratic { center: 1.0 });
        let l2: DynLoss = Arc::new(ShiftedQuadratic { center: -1.0 });
        let partition = Partition::new(0, 0, 1);
        let h = 0.1;
        let field =
            multitask_modified_field(l1.clone(), l2.clone(), 1.0, 1.0, h, partition).unwrap();
        let p = ParamVector::from_slice(&[0.0]).unwrap();
        let fd = fd_grad_of(
            |q| {
                multitask_modified_loss_value(l1.as_ref(), l2.as_ref(), 1.0, 1.0, h, q, &partition)
                    .unwrap()
            },
            &p,
            autodiff::default_fd_step(1.0),
        );
        let eval = field.eval(&p).unwrap();
        let rel = (&eval + &fd).norm() / eval.norm().max(1.0);
        assert!(rel <= 1e-6, "field vs fd gradient mismatch {rel}");
    }

    #[test]
    fn multitask_rejects_coupled_heads() {
        // a loss coupling all coordinates pretends φ2 belongs to task 1
        let a = DMatrix::from_column_slice(3, 3, &[2.0, 0.5, 0.5, 0.5, 2.0, 0.5, 0.5, 0.5, 2.0]);
        let l: DynLoss = quad(a);
        let partition = Partition::new(1, 1, 1);
        assert!(matches!(
            multitask_modified_field(l.clone(), l.clone(), 1.0, 1.0, 0.1, partition),
            Err(Error::ForeignHeadDependence { .. })
        ));
    }

    #[test]
    fn conflict_hand_values() {
        let l1 = ShiftedQuadratic { center: 1.0 };
        let l2 = ShiftedQuadratic { center: -1.0 };
        let partition = Partition::new(0, 0, 1);
        let at_zero = ParamVector::from_slice(&[0.0]).unwrap();
        assert_eq!(
            multitask_conflict(&l1, &l2, &at_zero, &partition).unwrap(),
            -1.0
        );
        // self-alignment: identical tasks give ‖∇_θL‖² ≥ 0
        let p = ParamVector::from_slice(&[0.3]).unwrap();
        let c = multitask_conflict(&l1, &l1, &p, &partition).unwrap();
        assert!(c >= 0.0);
        assert_relative_eq!(c, 0.49, max_relative = 1e-14);
    }

    #[test]
    fn continual_field_hand_value() {
        // L1 = L2 = ½θ², h = 0.1, θ = 1 → −(2θ + hθ) = −2.1, bracket zero
        let l = unit_1d();
        let field = continual_modified_field(l.clone(), l, 0.1, true).unwrap();
        let p = ParamVector::from_slice(&[1.0]).unwrap();
        assert_relative_eq!(field.eval(&p).unwrap()[0], -2.1, max_relative = 1e-15);
    }

    #[test]
    fn continual_bracket_term_vanishes_for_commuting_pair() {
        let (sa, sb) = commuting_pair(4, 30).unwrap();
        let l1: DynLoss = Arc::new(quadratic_loss(sa));
        let l2: DynLoss = Arc::new(quadratic_loss(sb));
        let with = continual_modified_field(l1.clone(), l2.clone(), 0.1, true).unwrap();
        let without = continual_modified_field(l1, l2, 0.1, false).unwrap();
        for seed in 0..5 {
            let p = random_point(4, seed + 40);
            let diff = (with.eval(&p).unwrap() - without.eval(&p).unwrap()).norm();
            assert!(diff <= 1e-12, "bracket contribution {diff}");
        }
    }

    #[test]
    fn continual_field_quadratic_closed_form() {
        let (sa, sb) = noncommuting_pair(4, 31, 0.1).unwrap();
        let (a, b) = (sa.matrix().clone(), sb.matrix().clone());
        let l1: DynLoss = Arc::new(quadratic_loss(sa));
        let l2: DynLoss = Arc::new(quadratic_loss(sb));
        let h = 0.08;
        let field = continual_modified_field(l1, l2, h, true).unwrap();
        // −(A+B)θ − (h/2)(A²+B²)θ + (h/2)(BA−AB)θ
        let closed = LinearField::new(
            -(&a + &b) - (h / 2.0) * (&a * &a + &b * &b) + (h / 2.0) * (&b * &a - &a * &b),
            DVector::zeros(4),
        )
        .unwrap();
        let p = random_point(4, 50);
        assert_relative_eq!(
            field.eval(&p).unwrap(),
            closed.eval(&p).unwrap(),
            max_relative = 1e-12
        );
    }

    #[test]
    fn modified_flow_spec_builds_each_setting() {
        let l = unit_1d();
        let spec = ModifiedFlowSpec::SingleTask { h: 0.1 };
        let field = spec.build(std::slice::from_ref(&l), None).unwrap();
        assert_eq!(field.dimension(), 1);
        assert!(spec.build(&[l.clone(), l.clone()], None).is_err());
        let cont = ModifiedFlowSpec::Continual {
            h: 0.1,
            include_bracket: false,
        };
        assert!(cont.build(&[l.clone(), l.clone()], None).is_ok());
        let multi = ModifiedFlowSpec::Multitask {
            h: 0.1,
            alpha: 1.0,
            beta: 1.0,
        };
        assert!(matches!(
            multi.build(&[l.clone(), l.clone()], None),
            Err(Error::MissingPartition)
        ));
    }

    #[test]
    fn default_jvp_is_close_to_exact_on_linear_field() {
        struct EvalOnly(LinearField);
        impl VectorField for EvalOnly {
            fn dimension(&self) -> usize {
                self.0.dimension()
            }
            fn eval(&self, p: &ParamVector) -> Result<DVector<f64>> {
                self.0.eval(p)
            }
        }
        let a = DMatrix::from_column_slice(2, 2, &[1.0, 0.2, 0.2, 2.0]);
        let exact = LinearField::new(a.clone(), DVector::zeros(2)).unwrap();
        let fd_only = EvalOnly(LinearField::new(a, DVector::zeros(2)).unwrap());
        let p = random_point(2, 60);
        let v = DVector::from_column_slice(&[0.7, -0.4]);
        let rel = (exact.jvp(&p, &v).unwrap() - fd_only.jvp(&p, &v).unwrap()).norm()
            / exact.jvp(&p, &v).unwrap().norm();
        assert!(rel <= 1e-8, "fd jvp error {rel}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        // [F,G] = −[G,F], floating-point identical up to negation.
        #[test]
        fn bracket_antisymmetry_is_exact(seed in 0u64..500) {
            let (sa, sb) = noncommuting_pair(4, seed, 0.0).unwrap();
            let fa = grad_field(Arc::new(quadratic_loss(sa)));
            let fb = grad_field(Arc::new(quadratic_loss(sb)));
            let p = random_point(4, seed ^ 0xdead);
            let fg = lie_bracket(&fa, &fb, &p).unwrap();
            let gf = lie_bracket(&fb, &fa, &p).unwrap();
            for i in 0..4 {
                prop_assert_eq!(fg[i], -gf[i]);
            }
        }

        // [aF₁ + bF₂, G] = a[F₁,G] + b[F₂,G] for exact-oracle fields.
        #[test]
        fn bracket_bilinearity(a in -2.0f64..2.0, b in -2.0f64..2.0, seed in 0u64..500) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = 3;
            let rand_sym = |rng: &mut ChaCha8Rng| {
                let raw = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
                (&raw + raw.transpose()) * 0.5
            };
            let (m1, m2, mg) = (rand_sym(&mut rng), rand_sym(&mut rng), rand_sym(&mut rng));
            let f1 = LinearField::new(m1.clone(), DVector::zeros(n)).unwrap();
            let f2 = LinearField::new(m2.clone(), DVector::zeros(n)).unwrap();
            let g = LinearField::new(mg, DVector::zeros(n)).unwrap();
            let combo = LinearField::new(a * &m1 + b * &m2, DVector::zeros(n)).unwrap();
            let p = random_point(n, seed ^ 0xbeef);
            let lhs = lie_bracket(&combo, &g, &p).unwrap();
            let rhs = a * lie_bracket(&f1, &g, &p).unwrap() + b * lie_bracket(&f2, &g, &p).unwrap();
            prop_assert!((lhs - rhs).norm() <= 1e-12);
        }

        // For L_A = ½θᵀAθ, L_B = ½θᵀBθ: [∇L_A, ∇L_B](θ) = (BA − AB)θ.
        #[test]
        fn bracket_quadratic_closed_form(seed in 0u64..500) {
            let (sa, sb) = noncommuting_pair(4, seed, 0.0).unwrap();
            let (a, b) = (sa.matrix().clone(), sb.matrix().clone());
            let fa = grad_field(Arc::new(quadratic_loss(sa)));
            let fb = grad_field(Arc::new(quadratic_loss(sb)));
            let p = random_point(4, seed ^ 0xfeed);
            let bracket = lie_bracket(&fa, &fb, &p).unwrap();
            let oracle = (&b * &a - &a * &b) * p.values();
            let rel = (&bracket - &oracle).norm() / oracle.norm().max(1e-30);
            prop_assert!(rel <= 1e-12, "relative error {}", rel);
        }
    }
}
