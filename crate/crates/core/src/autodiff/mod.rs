//! Differentiation oracles: value, gradient and Hessian-vector products for
//! every loss in the system, plus finite-difference validators.
//!
//! Two backends implement [`ScalarLoss`]: closed-form quadratics (exact to
//! machine precision) and a reverse-mode tape with a forward tangent channel
//! for the MLP (see [`tape`]). Finite differences appear only in the
//! validators below; they are never used to produce a production gradient.

pub mod tape;

use std::sync::Arc;

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::param::ParamVector;

/// A differentiable scalar objective.
///
/// Implementations provide the raw oracles; the free functions in this module
/// wrap them with dimension and finiteness checks and are the entry points the
/// rest of the crate uses. Oracles are pure: same inputs, same outputs.
pub trait ScalarLoss: Send + Sync {
    fn dimension(&self) -> usize;

    fn value(&self, point: &ParamVector) -> f64;

    fn gradient(&self, point: &ParamVector) -> DVector<f64>;

    /// Hessian-vector product `H(point) · dir`.
    fn hvp(&self, point: &ParamVector, dir: &DVector<f64>) -> DVector<f64>;

    /// Value and gradient together; backends that share work between the two
    /// (the tape) override this.
    fn value_and_grad(&self, point: &ParamVector) -> (f64, DVector<f64>) {
        (self.value(point), self.gradient(point))
    }
}

/// Shared handle to a loss; fields and training drivers store these.
pub type DynLoss = Arc<dyn ScalarLoss>;

fn check_dims(loss: &dyn ScalarLoss, point: &ParamVector) -> Result<()> {
    if loss.dimension() != point.dimension() {
        return Err(Error::DimensionMismatch {
            expected: loss.dimension(),
            got: point.dimension(),
        });
    }
    Ok(())
}

fn ensure_finite_vec(v: &DVector<f64>, context: &'static str) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite { context })
    }
}

/// Loss value and full gradient at `point`.
pub fn value_and_grad(loss: &dyn ScalarLoss, point: &ParamVector) -> Result<(f64, DVector<f64>)> {
    check_dims(loss, point)?;
    let (v, g) = loss.value_and_grad(point);
    if !v.is_finite() {
        return Err(Error::NonFinite {
            context: "loss value",
        });
    }
    ensure_finite_vec(&g, "loss gradient")?;
    Ok((v, g))
}

/// Gradient at `point`.
pub fn gradient(loss: &dyn ScalarLoss, point: &ParamVector) -> Result<DVector<f64>> {
    check_dims(loss, point)?;
    let g = loss.gradient(point);
    ensure_finite_vec(&g, "loss gradient")?;
    Ok(g)
}

/// Hessian-vector product `H(point) · dir`.
pub fn hvp(loss: &dyn ScalarLoss, point: &ParamVector, dir: &DVector<f64>) -> Result<DVector<f64>> {
    check_dims(loss, point)?;
    if dir.len() != loss.dimension() {
        return Err(Error::DimensionMismatch {
            expected: loss.dimension(),
            got: dir.len(),
        });
    }
    let hv = loss.hvp(point, dir);
    ensure_finite_vec(&hv, "hessian-vector product")?;
    Ok(hv)
}

/// Central-difference step with the optimal truncation/rounding tradeoff for
/// first derivatives: `scale · cbrt(machine epsilon)`.
pub fn default_fd_step(scale: f64) -> f64 {
    scale * f64::EPSILON.cbrt()
}

/// Compares the analytic gradient against central finite differences of the
/// value. Returns the max over coordinates of
/// `|analytic − fd| / max(1, |analytic|)`.
///
/// This is a validator, not a gradient source.
pub fn check_grad_fd(loss: &dyn ScalarLoss, point: &ParamVector, fd_step: f64) -> Result<f64> {
    if !fd_step.is_finite() || fd_step <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "fd_step must be positive, got {fd_step}"
        )));
    }
    let g = gradient(loss, point)?;
    let fd = fd_gradient(loss, point, fd_step)?;
    let mut worst = 0.0f64;
    for i in 0..g.len() {
        let err = (g[i] - fd[i]).abs() / g[i].abs().max(1.0);
        worst = worst.max(err);
    }
    Ok(worst)
}

/// Central finite-difference gradient (validator).
pub fn fd_gradient(loss: &dyn ScalarLoss, point: &ParamVector, fd_step: f64) -> Result<DVector<f64>> {
    check_dims(loss, point)?;
    let n = point.dimension();
    let mut fd = DVector::zeros(n);
    for i in 0..n {
        let mut plus = point.values().clone();
        let mut minus = point.values().clone();
        plus[i] += fd_step;
        minus[i] -= fd_step;
        let vp = loss.value(&point.map_values(plus));
        let vm = loss.value(&point.map_values(minus));
        fd[i] = (vp - vm) / (2.0 * fd_step);
    }
    Ok(fd)
}

/// Central finite-difference Hessian-vector product: the directional
/// derivative of the gradient along `dir` (validator).
pub fn fd_hvp(
    loss: &dyn ScalarLoss,
    point: &ParamVector,
    dir: &DVector<f64>,
    fd_step: f64,
) -> Result<DVector<f64>> {
    check_dims(loss, point)?;
    let norm = dir.norm();
    if norm == 0.0 {
        return Ok(DVector::zeros(point.dimension()));
    }
    let unit = dir / norm;
    let plus = point.map_values(point.values() + fd_step * &unit);
    let minus = point.map_values(point.values() - fd_step * &unit);
    let gp = loss.gradient(&plus);
    let gm = loss.gradient(&minus);
    Ok((gp - gm) * (norm / (2.0 * fd_step)))
}

/// `w1 · L1 + w2 · L2` as a single loss.
///
/// The joint multitask step is exactly one SGD step on this combined loss, so
/// gradient evaluation order here fixes the bitwise behavior of that step.
pub struct WeightedSumLoss {
    first: DynLoss,
    second: DynLoss,
    w1: f64,
    w2: f64,
}

impl WeightedSumLoss {
    pub fn new(first: DynLoss, w1: f64, second: DynLoss, w2: f64) -> Result<Self> {
        if first.dimension() != second.dimension() {
            return Err(Error::DimensionMismatch {
                expected: first.dimension(),
                got: second.dimension(),
            });
        }
        if !w1.is_finite() || !w2.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "non-finite weights ({w1}, {w2})"
            )));
        }
        Ok(WeightedSumLoss {
            first,
            second,
            w1,
            w2,
        })
    }
}

impl ScalarLoss for WeightedSumLoss {
    fn dimension(&self) -> usize {
        self.first.dimension()
    }

    fn value(&self, point: &ParamVector) -> f64 {
        self.w1 * self.first.value(point) + self.w2 * self.second.value(point)
    }

    fn gradient(&self, point: &ParamVector) -> DVector<f64> {
        self.w1 * self.first.gradient(point) + self.w2 * self.second.gradient(point)
    }

    fn hvp(&self, point: &ParamVector, dir: &DVector<f64>) -> DVector<f64> {
        self.w1 * self.first.hvp(point, dir) + self.w2 * self.second.hvp(point, dir)
    }
}
