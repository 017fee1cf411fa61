//! High-accuracy reference integration of vector-field flows.
//!
//! Drift measurements compare a discrete optimizer step against the flow of a
//! corrected field, so the integrator error must sit far below the O(h³)
//! drift floor being measured. The default is a Dormand–Prince 5(4) embedded
//! pair at 1e-12 tolerances with PI step-size control; fixed-step classical
//! RK4 is the fallback.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::fields::VectorField;
use crate::param::ParamVector;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IntegratorMethod {
    Rk4Fixed,
    Rk45Adaptive,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegratorConfig {
    pub method: IntegratorMethod,
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_steps: usize,
    /// Fixed-method substep count over the whole integration interval.
    pub substeps: usize,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        IntegratorConfig {
            method: IntegratorMethod::Rk45Adaptive,
            abs_tol: 1e-12,
            rel_tol: 1e-12,
            max_steps: 1_000_000,
            substeps: 64,
        }
    }
}

impl IntegratorConfig {
    fn validate(&self) -> Result<()> {
        if !self.abs_tol.is_finite()
            || self.abs_tol <= 0.0
            || !self.rel_tol.is_finite()
            || self.rel_tol <= 0.0
        {
            return Err(Error::InvalidParameter(format!(
                "tolerances must be positive, got abs {} rel {}",
                self.abs_tol, self.rel_tol
            )));
        }
        if self.substeps == 0 || self.max_steps == 0 {
            return Err(Error::InvalidParameter(
                "substeps and max_steps must be at least 1".into(),
            ));
        }
        Ok(())
    }

    /// The error scale the integrator holds a state of the given norm to.
    pub fn tolerance_scale(&self, state_norm: f64) -> f64 {
        self.abs_tol.max(self.rel_tol * state_norm)
    }
}

fn ensure_finite(y: &DVector<f64>) -> Result<()> {
    if y.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite {
            context: "integrator state",
        })
    }
}

/// Flows `start` along `field` for time `t_final` and returns the endpoint.
pub fn integrate(
    field: &dyn VectorField,
    start: &ParamVector,
    t_final: f64,
    cfg: &IntegratorConfig,
) -> Result<ParamVector> {
    cfg.validate()?;
    if field.dimension() != start.dimension() {
        return Err(Error::DimensionMismatch {
            expected: field.dimension(),
            got: start.dimension(),
        });
    }
    if !t_final.is_finite() || t_final < 0.0 {
        return Err(Error::InvalidParameter(format!(
            "integration time must be finite and nonnegative, got {t_final}"
        )));
    }
    if t_final == 0.0 {
        return Ok(start.clone());
    }
    let end = match cfg.method {
        IntegratorMethod::Rk4Fixed => rk4_fixed(field, start, t_final, cfg)?,
        IntegratorMethod::Rk45Adaptive => dopri5(field, start, t_final, cfg)?,
    };
    Ok(start.map_values(end))
}

fn rk4_fixed(
    field: &dyn VectorField,
    start: &ParamVector,
    t_final: f64,
    cfg: &IntegratorConfig,
) -> Result<DVector<f64>> {
    let dt = t_final / cfg.substeps as f64;
    let mut y = start.values().clone();
    for _ in 0..cfg.substeps {
        let at = |v: &DVector<f64>| start.map_values(v.clone());
        let k1 = field.eval(&at(&y))?;
        let k2 = field.eval(&at(&(&y + (dt / 2.0) * &k1)))?;
        let k3 = field.eval(&at(&(&y + (dt / 2.0) * &k2)))?;
        let k4 = field.eval(&at(&(&y + dt * &k3)))?;
        y += (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        ensure_finite(&y)?;
    }
    Ok(y)
}

// Dormand–Prince 5(4) tableau.
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
// b − b̂: difference against the embedded 4th-order solution.
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

const SAFETY: f64 = 0.9;
const FACTOR_MIN: f64 = 0.2;
const FACTOR_MAX: f64 = 5.0;
// PI controller exponents for a 5th-order error estimate.
const ALPHA_PI: f64 = 0.7 / 5.0;
const BETA_PI: f64 = 0.4 / 5.0;
const ERR_TINY: f64 = 1e-30;

fn dopri5(
    field: &dyn VectorField,
    start: &ParamVector,
    t_final: f64,
    cfg: &IntegratorConfig,
) -> Result<DVector<f64>> {
    let n = start.dimension();
    let at = |v: &DVector<f64>| start.map_values(v.clone());
    let mut y = start.values().clone();
    let mut t = 0.0f64;
    let mut k1 = field.eval(&at(&y))?;
    let mut dt = initial_step(field, start, &k1, t_final, cfg)?;
    let mut err_prev = 1.0f64;
    let mut steps = 0usize;

    while t < t_final {
        steps += 1;
        if steps > cfg.max_steps {
            return Err(Error::MaxStepsExceeded {
                max_steps: cfg.max_steps,
            });
        }
        let clamped = t + dt >= t_final;
        if clamped {
            dt = t_final - t;
        }

        let k2 = field.eval(&at(&(&y + dt * (A21 * &k1))))?;
        let k3 = field.eval(&at(&(&y + dt * (A31 * &k1 + A32 * &k2))))?;
        let k4 = field.eval(&at(&(&y + dt * (A41 * &k1 + A42 * &k2 + A43 * &k3))))?;
        let k5 = field.eval(&at(
            &(&y + dt * (A51 * &k1 + A52 * &k2 + A53 * &k3 + A54 * &k4)),
        ))?;
        let k6 = field.eval(&at(
            &(&y + dt * (A61 * &k1 + A62 * &k2 + A63 * &k3 + A64 * &k4 + A65 * &k5)),
        ))?;
        let y_new = &y + dt * (B1 * &k1 + B3 * &k3 + B4 * &k4 + B5 * &k5 + B6 * &k6);
        let k7 = field.eval(&at(&y_new))?;
        let err_vec = dt * (E1 * &k1 + E3 * &k3 + E4 * &k4 + E5 * &k5 + E6 * &k6 + E7 * &k7);

        let mut err_sq = 0.0f64;
        for i in 0..n {
            let scale = cfg.abs_tol + cfg.rel_tol * y[i].abs().max(y_new[i].abs());
            let r = err_vec[i] / scale;
            err_sq += r * r;
        }
        let err = (err_sq / n as f64).sqrt();
        if !err.is_finite() {
            return Err(Error::NonFinite {
                context: "integrator error estimate",
            });
        }

        if err <= 1.0 {
            ensure_finite(&y_new)?;
            t = if clamped { t_final } else { t + dt };
            y = y_new;
            k1 = k7; // first-same-as-last
            let grow = SAFETY * err.max(ERR_TINY).powf(-ALPHA_PI) * err_prev.powf(BETA_PI);
            dt *= grow.clamp(FACTOR_MIN, FACTOR_MAX);
            err_prev = err.max(ERR_TINY);
        } else {
            let shrink = (SAFETY * err.powf(-0.2)).clamp(FACTOR_MIN, 1.0);
            dt *= shrink;
        }
        if dt < f64::EPSILON * t_final {
            return Err(Error::InvalidParameter(
                "adaptive step size underflow".into(),
            ));
        }
    }
    Ok(y)
}

/// Conventional two-probe starting step: match the local error model against
/// the field magnitude at the start, then clamp by the interval.
fn initial_step(
    field: &dyn VectorField,
    start: &ParamVector,
    f0: &DVector<f64>,
    t_final: f64,
    cfg: &IntegratorConfig,
) -> Result<f64> {
    let n = start.dimension();
    let scaled_norm = |v: &DVector<f64>, reference: &DVector<f64>| -> f64 {
        let mut acc = 0.0;
        for i in 0..n {
            let scale = cfg.abs_tol + cfg.rel_tol * reference[i].abs();
            let r = v[i] / scale;
            acc += r * r;
        }
        (acc / n as f64).sqrt()
    };
    let y0 = start.values();
    let d0 = scaled_norm(y0, y0);
    let d1 = scaled_norm(f0, y0);
    let h0 = if d0 < 1e-5 || d1 < 1e-5 {
        1e-6
    } else {
        0.01 * d0 / d1
    }
    .min(t_final);
    let y1 = y0 + h0 * f0;
    let f1 = field.eval(&start.map_values(y1))?;
    let d2 = scaled_norm(&(&f1 - f0), y0) / h0;
    let h1 = if d1.max(d2) <= 1e-15 {
        (h0 * 1e-3).max(1e-6)
    } else {
        (0.01 / d1.max(d2)).powf(0.2)
    };
    Ok((100.0 * h0).min(h1).min(t_final))
}

/// `‖φ_F^t(φ_G^t(θ0)) − φ_G^t(φ_F^t(θ0))‖` — the finite-time footprint of a
/// nonzero Lie bracket; vanishing bracket means commuting flows.
pub fn flow_commutator_defect(
    f: &dyn VectorField,
    g: &dyn VectorField,
    start: &ParamVector,
    t: f64,
    cfg: &IntegratorConfig,
) -> Result<f64> {
    if !t.is_finite() || t <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "defect horizon must be finite and positive, got {t}"
        )));
    }
    let fg = integrate(f, &integrate(g, start, t, cfg)?, t, cfg)?;
    let gf = integrate(g, &integrate(f, start, t, cfg)?, t, cfg)?;
    Ok((fg.values() - gf.values()).norm())
}
