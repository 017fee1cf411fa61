//! Quadratic test problems with closed-form oracles and prescribed Hessian
//! commutators.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::autodiff::ScalarLoss;
use crate::error::{Error, Result};
use crate::param::{ParamVector, Partition};

/// Loss `½ θᵀAθ − bᵀθ` with `A` symmetric positive semi-definite.
#[derive(Debug, Clone)]
pub struct QuadraticSpec {
    matrix: DMatrix<f64>,
    offset: DVector<f64>,
}

impl QuadraticSpec {
    pub fn new(matrix: DMatrix<f64>, offset: DVector<f64>) -> Result<Self> {
        let n = matrix.nrows();
        if matrix.ncols() != n {
            return Err(Error::InvalidParameter(format!(
                "matrix must be square, got {}x{}",
                n,
                matrix.ncols()
            )));
        }
        if offset.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: offset.len(),
            });
        }
        if !matrix.iter().chain(offset.iter()).all(|v| v.is_finite()) {
            return Err(Error::NonFinite {
                context: "quadratic spec",
            });
        }
        let scale = matrix.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
        let mut max_asym = 0.0f64;
        for i in 0..n {
            for j in (i + 1)..n {
                max_asym = max_asym.max((matrix[(i, j)] - matrix[(j, i)]).abs());
            }
        }
        if max_asym > 1e-14 * scale {
            return Err(Error::NotSymmetric { max_asym });
        }
        let eigs = matrix.clone().symmetric_eigenvalues();
        let min_eig = eigs.iter().cloned().fold(f64::INFINITY, f64::min);
        if min_eig < -1e-10 * scale {
            return Err(Error::NotPsd { min_eig });
        }
        Ok(QuadraticSpec { matrix, offset })
    }

    pub fn dimension(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn offset(&self) -> &DVector<f64> {
        &self.offset
    }
}

/// Exact value/gradient/HVP oracles for a [`QuadraticSpec`].
#[derive(Debug, Clone)]
pub struct QuadraticLoss {
    spec: QuadraticSpec,
}

pub fn quadratic_loss(spec: QuadraticSpec) -> QuadraticLoss {
    QuadraticLoss { spec }
}

impl QuadraticLoss {
    pub fn spec(&self) -> &QuadraticSpec {
        &self.spec
    }
}

impl ScalarLoss for QuadraticLoss {
    fn dimension(&self) -> usize {
        self.spec.dimension()
    }

    fn value(&self, point: &ParamVector) -> f64 {
        let theta = point.values();
        0.5 * theta.dot(&(&self.spec.matrix * theta)) - self.spec.offset.dot(theta)
    }

    fn gradient(&self, point: &ParamVector) -> DVector<f64> {
        &self.spec.matrix * point.values() - &self.spec.offset
    }

    fn hvp(&self, _point: &ParamVector, dir: &DVector<f64>) -> DVector<f64> {
        &self.spec.matrix * dir
    }
}

fn random_orthogonal(n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let raw = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
    raw.qr().q()
}

fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    let t = m.transpose();
    (m + t) * 0.5
}

/// Two SPD matrices sharing a random eigenbasis, so `AB = BA` up to roundoff
/// and the gradient flows of the induced quadratics commute.
pub fn commuting_pair(n: usize, seed: u64) -> Result<(QuadraticSpec, QuadraticSpec)> {
    if n < 2 {
        return Err(Error::InvalidParameter(format!(
            "pair dimension must be at least 2, got {n}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let q = random_orthogonal(n, &mut rng);
    let lam1 = DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            rng.random_range(0.2..1.0)
        } else {
            0.0
        }
    });
    let lam2 = DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            rng.random_range(0.2..1.0)
        } else {
            0.0
        }
    });
    let a = symmetrize(&q * lam1 * q.transpose());
    let b = symmetrize(&q * lam2 * q.transpose());
    Ok((
        QuadraticSpec::new(a, DVector::zeros(n))?,
        QuadraticSpec::new(b, DVector::zeros(n))?,
    ))
}

/// An SPD pair whose commutator is large in every direction.
///
/// Both matrices carry the same alternating small/large eigenvalue ladder;
/// the second basis is the first rotated by 45° inside each consecutive
/// eigen-plane. Within each plane the commutator acts as a rotation of fixed
/// magnitude `(λ_hi − λ_lo)²/2`, so `‖(AB − BA)v‖` is essentially independent
/// of the direction `v` — which keeps the drift signal of the missing bracket
/// term well above higher-order contamination over the whole step-size sweep.
///
/// Retries widen the eigenvalue spread until `‖AB − BA‖_F ≥ commutator_scale`.
pub fn noncommuting_pair(
    n: usize,
    seed: u64,
    commutator_scale: f64,
) -> Result<(QuadraticSpec, QuadraticSpec)> {
    if n < 2 {
        return Err(Error::InvalidParameter(format!(
            "pair dimension must be at least 2, got {n}"
        )));
    }
    if !commutator_scale.is_finite() || commutator_scale < 0.0 {
        return Err(Error::InvalidParameter(format!(
            "commutator_scale must be nonnegative, got {commutator_scale}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    const MAX_ATTEMPTS: usize = 32;
    let (lo, mut hi) = (0.2, 1.0);
    for _ in 0..MAX_ATTEMPTS {
        let q = random_orthogonal(n, &mut rng);
        let lam = DVector::from_fn(n, |i, _| {
            let base = if i % 2 == 0 { lo } else { hi };
            base * (1.0 + 0.05 * rng.random_range(-1.0..1.0))
        });
        let mut rot = DMatrix::identity(n, n);
        let (c, s) = (std::f64::consts::FRAC_1_SQRT_2, std::f64::consts::FRAC_1_SQRT_2);
        let mut i = 0;
        while i + 1 < n {
            let mut givens = DMatrix::identity(n, n);
            givens[(i, i)] = c;
            givens[(i, i + 1)] = -s;
            givens[(i + 1, i)] = s;
            givens[(i + 1, i + 1)] = c;
            rot *= givens;
            i += 2;
        }
        let diag = DMatrix::from_diagonal(&lam);
        let a = symmetrize(&q * &diag * q.transpose());
        let b = symmetrize(&q * (&rot * &diag * rot.transpose()) * q.transpose());
        let comm = (&a * &b - &b * &a).norm();
        if comm >= commutator_scale {
            return Ok((
                QuadraticSpec::new(a, DVector::zeros(n))?,
                QuadraticSpec::new(b, DVector::zeros(n))?,
            ));
        }
        // widen the ladder and try a fresh basis
        hi *= 1.3;
    }
    Err(Error::ConstructionFailed {
        attempts: MAX_ATTEMPTS,
        reason: format!("could not reach commutator norm {commutator_scale}"),
    })
}

fn random_spd(m: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let q = random_orthogonal(m, rng);
    let lam = DMatrix::from_fn(m, m, |i, j| {
        if i == j {
            rng.random_range(0.3..1.2)
        } else {
            0.0
        }
    });
    symmetrize(&q * lam * q.transpose())
}

/// Two quadratic task losses over a partitioned vector `[φ1 | φ2 | θ]`:
/// task 1 couples `(φ1, θ)` through a dense SPD block and ignores `φ2`, task 2
/// mirrors it on `(φ2, θ)`.
pub fn multitask_quadratic_pair(
    head1: usize,
    head2: usize,
    shared: usize,
    seed: u64,
) -> Result<(QuadraticLoss, QuadraticLoss, Partition)> {
    if shared == 0 {
        return Err(Error::InvalidParameter(
            "multitask pair needs at least one shared coordinate".into(),
        ));
    }
    let partition = Partition::new(head1, head2, shared);
    let n = partition.total();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut build = |own: Vec<usize>| -> Result<QuadraticLoss> {
        let m = own.len();
        let block = random_spd(m, &mut rng);
        let offset_block: Vec<f64> =
            (0..m).map(|_| 0.5 * rng.sample::<f64, _>(StandardNormal)).collect();
        let mut matrix = DMatrix::zeros(n, n);
        let mut offset = DVector::zeros(n);
        for (i, &gi) in own.iter().enumerate() {
            offset[gi] = offset_block[i];
            for (j, &gj) in own.iter().enumerate() {
                matrix[(gi, gj)] = block[(i, j)];
            }
        }
        Ok(quadratic_loss(QuadraticSpec::new(matrix, offset)?))
    };

    let own1: Vec<usize> = partition
        .head1_range()
        .chain(partition.shared_range())
        .collect();
    let own2: Vec<usize> = partition
        .head2_range()
        .chain(partition.shared_range())
        .collect();
    let l1 = build(own1)?;
    let l2 = build(own2)?;
    Ok((l1, l2, partition))
}
