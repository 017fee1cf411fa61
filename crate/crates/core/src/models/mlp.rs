//! A small shared-trunk / two-head regression network on fixed synthetic data.
//!
//! Parameters live in one flat vector laid out `[φ1 | φ2 | θ]`: the two
//! linear task heads, then the tanh trunk. Each task loss is a half
//! mean-squared error over its own fixed sample set; it reads the trunk and
//! its own head only, so its gradient is identically zero on the other head's
//! segment. tanh keeps every loss twice differentiable, which the corrected
//! fields and Lie brackets require.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::autodiff::tape::{BufId, Dual, Tape};
use crate::autodiff::ScalarLoss;
use crate::error::{Error, Result};
use crate::param::{ParamVector, Partition};

const SALT_INPUTS_1: u64 = 0x11;
const SALT_INPUTS_2: u64 = 0x22;
const SALT_TEACHER: u64 = 0x33;
const SALT_INIT: u64 = 0x44;

/// Teacher network hidden width used to generate regression targets.
const TEACHER_HIDDEN: usize = 6;

/// Norm the initial parameter vector is rescaled to. Keeps drift magnitudes
/// inside the measurable window of the default step-size sweep.
const INIT_NORM: f64 = 1.5;

/// Architecture and data recipe for the two-task network.
#[derive(Debug, Clone)]
pub struct MlpSpec {
    pub input_dim: usize,
    /// Trunk layer widths after the input; each layer is linear + tanh. The
    /// last entry is the trunk output feeding the heads.
    pub trunk_widths: Vec<usize>,
    pub samples_per_task: usize,
    pub seed: u64,
    /// When set, both tasks share the same inputs and targets (and therefore
    /// the same loss surface); used to probe self-alignment identities.
    pub identical_tasks: bool,
}

impl Default for MlpSpec {
    fn default() -> Self {
        MlpSpec {
            input_dim: 4,
            trunk_widths: vec![8, 4],
            samples_per_task: 32,
            seed: 42,
            identical_tasks: false,
        }
    }
}

impl MlpSpec {
    fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.samples_per_task == 0 {
            return Err(Error::InvalidParameter(
                "input dimension and sample count must be positive".into(),
            ));
        }
        if self.trunk_widths.is_empty() || self.trunk_widths.contains(&0) {
            return Err(Error::InvalidParameter(
                "trunk widths must be nonempty and positive".into(),
            ));
        }
        Ok(())
    }

    fn trunk_out(&self) -> usize {
        *self.trunk_widths.last().unwrap()
    }

    fn trunk_param_count(&self) -> usize {
        let mut fan_in = self.input_dim;
        let mut count = 0;
        for &w in &self.trunk_widths {
            count += fan_in * w + w;
            fan_in = w;
        }
        count
    }

    fn head_param_count(&self) -> usize {
        self.trunk_out() + 1
    }
}

struct Dataset {
    xs: Vec<f64>, // samples × input_dim, row-major
    ys: Vec<f64>,
}

struct Teacher {
    w1: Vec<f64>, // input_dim × TEACHER_HIDDEN
    b1: Vec<f64>,
    w2: Vec<f64>,
    b2: f64,
}

impl Teacher {
    fn new(input_dim: usize, seed: u64) -> Teacher {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ SALT_TEACHER);
        let scale1 = 1.0 / (input_dim as f64).sqrt();
        let w1 = (0..input_dim * TEACHER_HIDDEN)
            .map(|_| scale1 * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let b1 = (0..TEACHER_HIDDEN)
            .map(|_| 0.1 * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let scale2 = 1.0 / (TEACHER_HIDDEN as f64).sqrt();
        let w2 = (0..TEACHER_HIDDEN)
            .map(|_| scale2 * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let b2 = 0.1 * rng.sample::<f64, _>(StandardNormal);
        Teacher { w1, b1, w2, b2 }
    }

    fn eval(&self, x: &[f64]) -> f64 {
        let mut out = self.b2;
        for j in 0..TEACHER_HIDDEN {
            let mut z = self.b1[j];
            for (i, &xi) in x.iter().enumerate() {
                z += xi * self.w1[i * TEACHER_HIDDEN + j];
            }
            out += z.tanh() * self.w2[j];
        }
        out
    }
}

fn make_dataset(spec: &MlpSpec, input_salt: u64, transform: impl Fn(f64) -> f64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ input_salt);
    let n = spec.samples_per_task * spec.input_dim;
    let xs: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let teacher = Teacher::new(spec.input_dim, spec.seed);
    let ys = (0..spec.samples_per_task)
        .map(|s| transform(teacher.eval(&xs[s * spec.input_dim..(s + 1) * spec.input_dim])))
        .collect();
    Dataset { xs, ys }
}

/// One task's half-MSE loss over the flat parameter vector.
pub struct MlpTaskLoss {
    input_dim: usize,
    trunk_widths: Vec<usize>,
    samples: usize,
    xs: Vec<f64>,
    ys: Vec<f64>,
    dim: usize,
    head_offset: usize,
    trunk_offset: usize,
}

impl MlpTaskLoss {
    fn dual_slice(omega: &DVector<f64>, dir: Option<&DVector<f64>>, off: usize, len: usize) -> Vec<Dual> {
        (0..len)
            .map(|i| Dual {
                re: omega[off + i],
                du: dir.map_or(0.0, |d| d[off + i]),
            })
            .collect()
    }

    /// Builds and runs the forward program. Returns the tape, the loss buffer
    /// and the parameter buffers with their offsets into the flat vector.
    fn forward(
        &self,
        omega: &DVector<f64>,
        dir: Option<&DVector<f64>>,
    ) -> (Tape, BufId, Vec<(BufId, usize, usize)>) {
        let mut tape = Tape::new();
        let mut params = Vec::new();
        let x = tape.constant(self.samples, self.input_dim, &self.xs);

        let mut h = x;
        let mut fan_in = self.input_dim;
        let mut cursor = self.trunk_offset;
        for &w in &self.trunk_widths {
            let wlen = fan_in * w;
            let wbuf = tape.input(fan_in, w, Self::dual_slice(omega, dir, cursor, wlen));
            params.push((wbuf, cursor, wlen));
            cursor += wlen;
            let bbuf = tape.input(1, w, Self::dual_slice(omega, dir, cursor, w));
            params.push((bbuf, cursor, w));
            cursor += w;
            let z = tape.matmul(h, wbuf);
            let zb = tape.add_row(z, bbuf);
            h = tape.tanh(zb);
            fan_in = w;
        }

        let trunk_out = fan_in;
        let hw = tape.input(
            trunk_out,
            1,
            Self::dual_slice(omega, dir, self.head_offset, trunk_out),
        );
        params.push((hw, self.head_offset, trunk_out));
        let hb = tape.input(
            1,
            1,
            Self::dual_slice(omega, dir, self.head_offset + trunk_out, 1),
        );
        params.push((hb, self.head_offset + trunk_out, 1));

        let z = tape.matmul(h, hw);
        let pred = tape.add_row(z, hb);
        let y = tape.constant(self.samples, 1, &self.ys);
        let resid = tape.sub(pred, y);
        let loss = tape.scaled_mean_sq(resid, 0.5);
        (tape, loss, params)
    }

    fn scatter(
        &self,
        adjoints: &[Vec<Dual>],
        params: &[(BufId, usize, usize)],
        pick: impl Fn(Dual) -> f64,
    ) -> DVector<f64> {
        let mut out = DVector::zeros(self.dim);
        for &(buf, off, len) in params {
            for i in 0..len {
                out[off + i] = pick(adjoints[buf][i]);
            }
        }
        out
    }
}

impl ScalarLoss for MlpTaskLoss {
    fn dimension(&self) -> usize {
        self.dim
    }

    fn value(&self, point: &ParamVector) -> f64 {
        let (tape, loss, _) = self.forward(point.values(), None);
        tape.buffer(loss).data[0].re
    }

    fn gradient(&self, point: &ParamVector) -> DVector<f64> {
        self.value_and_grad(point).1
    }

    fn value_and_grad(&self, point: &ParamVector) -> (f64, DVector<f64>) {
        let (tape, loss, params) = self.forward(point.values(), None);
        let adj = tape.backward(loss);
        (
            tape.buffer(loss).data[0].re,
            self.scatter(&adj, &params, |d| d.re),
        )
    }

    fn hvp(&self, point: &ParamVector, dir: &DVector<f64>) -> DVector<f64> {
        let (tape, loss, params) = self.forward(point.values(), Some(dir));
        let adj = tape.backward(loss);
        self.scatter(&adj, &params, |d| d.du)
    }
}

/// The two task losses over `[φ1 | φ2 | θ]`, plus the segment layout.
pub fn mlp_multitask_loss(spec: &MlpSpec) -> Result<(MlpTaskLoss, MlpTaskLoss, Partition)> {
    spec.validate()?;
    let head = spec.head_param_count();
    let partition = Partition::new(head, head, spec.trunk_param_count());
    let dim = partition.total();
    let d1 = make_dataset(spec, SALT_INPUTS_1, |t| t);
    let d2 = if spec.identical_tasks {
        make_dataset(spec, SALT_INPUTS_1, |t| t)
    } else {
        make_dataset(spec, SALT_INPUTS_2, |t| -0.8 * t + 0.3)
    };
    let l1 = MlpTaskLoss {
        input_dim: spec.input_dim,
        trunk_widths: spec.trunk_widths.clone(),
        samples: spec.samples_per_task,
        xs: d1.xs,
        ys: d1.ys,
        dim,
        head_offset: 0,
        trunk_offset: partition.shared_range().start,
    };
    let l2 = MlpTaskLoss {
        input_dim: spec.input_dim,
        trunk_widths: spec.trunk_widths.clone(),
        samples: spec.samples_per_task,
        xs: d2.xs,
        ys: d2.ys,
        dim,
        head_offset: partition.head2_range().start,
        trunk_offset: partition.shared_range().start,
    };
    Ok((l1, l2, partition))
}

fn draw_init(spec: &MlpSpec, heads: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ SALT_INIT);
    let mut values = Vec::new();
    let trunk_out = spec.trunk_out();
    let head_scale = 1.0 / (trunk_out as f64).sqrt();
    for _ in 0..heads {
        for _ in 0..trunk_out {
            values.push(head_scale * rng.sample::<f64, _>(StandardNormal));
        }
        values.push(0.1 * rng.sample::<f64, _>(StandardNormal));
    }
    let mut fan_in = spec.input_dim;
    for &w in &spec.trunk_widths {
        let scale = 1.0 / (fan_in as f64).sqrt();
        for _ in 0..fan_in * w {
            values.push(scale * rng.sample::<f64, _>(StandardNormal));
        }
        for _ in 0..w {
            values.push(0.1 * rng.sample::<f64, _>(StandardNormal));
        }
        fan_in = w;
    }
    let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
    for v in &mut values {
        *v *= INIT_NORM / norm;
    }
    values
}

/// Seeded fan-in-scaled starting point for the two-task network, rescaled to
/// unit-order norm, carrying the `[φ1 | φ2 | θ]` layout.
pub fn mlp_multitask_init(spec: &MlpSpec) -> Result<ParamVector> {
    spec.validate()?;
    let head = spec.head_param_count();
    let partition = Partition::new(head, head, spec.trunk_param_count());
    ParamVector::with_partition(DVector::from_vec(draw_init(spec, 2)), partition)
}

/// A single-task variant: trunk plus one head, laid out `[φ | θ]`.
pub fn mlp_single_task_loss(spec: &MlpSpec) -> Result<MlpTaskLoss> {
    spec.validate()?;
    let head = spec.head_param_count();
    let d = make_dataset(spec, SALT_INPUTS_1, |t| t);
    Ok(MlpTaskLoss {
        input_dim: spec.input_dim,
        trunk_widths: spec.trunk_widths.clone(),
        samples: spec.samples_per_task,
        xs: d.xs,
        ys: d.ys,
        dim: head + spec.trunk_param_count(),
        head_offset: 0,
        trunk_offset: head,
    })
}

/// Starting point matching [`mlp_single_task_loss`].
pub fn mlp_single_task_init(spec: &MlpSpec) -> Result<ParamVector> {
    spec.validate()?;
    ParamVector::new(DVector::from_vec(draw_init(spec, 1)))
}
