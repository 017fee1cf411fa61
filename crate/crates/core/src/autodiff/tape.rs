//! Reverse-mode tape over dense matrix operations.
//!
//! Every tape scalar is a [`Dual`]: a primal value plus a forward tangent.
//! Running the forward and reverse passes in dual arithmetic yields, in one
//! sweep, the gradient (real parts of the input adjoints) and the directional
//! derivative of the gradient (tangent parts) — i.e. a Hessian-vector product
//! when the inputs are seeded with the direction.
//!
//! Each evaluation owns its tape; concurrent evaluations never share state.

/// Value plus forward tangent.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Dual {
    pub re: f64,
    pub du: f64,
}

impl Dual {
    pub const ZERO: Dual = Dual { re: 0.0, du: 0.0 };

    pub fn constant(re: f64) -> Dual {
        Dual { re, du: 0.0 }
    }

    pub fn tanh(self) -> Dual {
        let t = self.re.tanh();
        Dual {
            re: t,
            du: self.du * (1.0 - t * t),
        }
    }

    pub fn scale(self, c: f64) -> Dual {
        Dual {
            re: self.re * c,
            du: self.du * c,
        }
    }
}

impl std::ops::Add for Dual {
    type Output = Dual;
    fn add(self, rhs: Dual) -> Dual {
        Dual {
            re: self.re + rhs.re,
            du: self.du + rhs.du,
        }
    }
}

impl std::ops::AddAssign for Dual {
    fn add_assign(&mut self, rhs: Dual) {
        self.re += rhs.re;
        self.du += rhs.du;
    }
}

impl std::ops::Sub for Dual {
    type Output = Dual;
    fn sub(self, rhs: Dual) -> Dual {
        Dual {
            re: self.re - rhs.re,
            du: self.du - rhs.du,
        }
    }
}

impl std::ops::SubAssign for Dual {
    fn sub_assign(&mut self, rhs: Dual) {
        self.re -= rhs.re;
        self.du -= rhs.du;
    }
}

impl std::ops::Mul for Dual {
    type Output = Dual;
    fn mul(self, rhs: Dual) -> Dual {
        Dual {
            re: self.re * rhs.re,
            du: self.re * rhs.du + self.du * rhs.re,
        }
    }
}

impl std::ops::Neg for Dual {
    type Output = Dual;
    fn neg(self) -> Dual {
        Dual {
            re: -self.re,
            du: -self.du,
        }
    }
}

/// Index of a buffer on the tape.
pub type BufId = usize;

/// Row-major dual matrix stored on the tape.
#[derive(Clone, Debug)]
pub struct Buffer {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<Dual>,
}

impl Buffer {
    fn zeros_like(&self) -> Vec<Dual> {
        vec![Dual::ZERO; self.data.len()]
    }
}

#[derive(Debug, Clone, Copy)]
enum Op {
    /// out = a · b
    MatMul { a: BufId, b: BufId, out: BufId },
    /// out[i, j] = a[i, j] + bias[0, j]
    AddRow { a: BufId, bias: BufId, out: BufId },
    /// out = tanh(a), elementwise
    Tanh { a: BufId, out: BufId },
    /// out = a − b, elementwise
    Sub { a: BufId, b: BufId, out: BufId },
    /// out = scale · mean(a_i²), a scalar
    ScaledMeanSq { a: BufId, out: BufId, scale: f64 },
}

/// Operation recorder. Forward values are computed eagerly as ops are pushed;
/// [`Tape::backward`] replays them in reverse to accumulate adjoints.
#[derive(Default)]
pub struct Tape {
    bufs: Vec<Buffer>,
    ops: Vec<Op>,
}

impl Tape {
    pub fn new() -> Tape {
        Tape::default()
    }

    fn push(&mut self, rows: usize, cols: usize, data: Vec<Dual>) -> BufId {
        assert_eq!(data.len(), rows * cols);
        self.bufs.push(Buffer { rows, cols, data });
        self.bufs.len() - 1
    }

    /// A buffer with zero tangent that receives no gradient of interest.
    pub fn constant(&mut self, rows: usize, cols: usize, values: &[f64]) -> BufId {
        let data = values.iter().map(|&v| Dual::constant(v)).collect();
        self.push(rows, cols, data)
    }

    /// A differentiable input buffer (parameters, possibly tangent-seeded).
    pub fn input(&mut self, rows: usize, cols: usize, data: Vec<Dual>) -> BufId {
        self.push(rows, cols, data)
    }

    pub fn buffer(&self, id: BufId) -> &Buffer {
        &self.bufs[id]
    }

    pub fn matmul(&mut self, a: BufId, b: BufId) -> BufId {
        let (m, k) = (self.bufs[a].rows, self.bufs[a].cols);
        let (k2, n) = (self.bufs[b].rows, self.bufs[b].cols);
        assert_eq!(k, k2, "matmul inner dimensions");
        let mut data = vec![Dual::ZERO; m * n];
        for i in 0..m {
            for p in 0..k {
                let aip = self.bufs[a].data[i * k + p];
                for j in 0..n {
                    data[i * n + j] += aip * self.bufs[b].data[p * n + j];
                }
            }
        }
        let out = self.push(m, n, data);
        self.ops.push(Op::MatMul { a, b, out });
        out
    }

    pub fn add_row(&mut self, a: BufId, bias: BufId) -> BufId {
        let (m, n) = (self.bufs[a].rows, self.bufs[a].cols);
        assert_eq!(self.bufs[bias].rows, 1);
        assert_eq!(self.bufs[bias].cols, n);
        let mut data = self.bufs[a].data.clone();
        for i in 0..m {
            for j in 0..n {
                data[i * n + j] += self.bufs[bias].data[j];
            }
        }
        let out = self.push(m, n, data);
        self.ops.push(Op::AddRow { a, bias, out });
        out
    }

    pub fn tanh(&mut self, a: BufId) -> BufId {
        let (m, n) = (self.bufs[a].rows, self.bufs[a].cols);
        let data = self.bufs[a].data.iter().map(|d| d.tanh()).collect();
        let out = self.push(m, n, data);
        self.ops.push(Op::Tanh { a, out });
        out
    }

    pub fn sub(&mut self, a: BufId, b: BufId) -> BufId {
        let (m, n) = (self.bufs[a].rows, self.bufs[a].cols);
        assert_eq!(self.bufs[b].rows, m);
        assert_eq!(self.bufs[b].cols, n);
        let data = self
            .bufs[a]
            .data
            .iter()
            .zip(&self.bufs[b].data)
            .map(|(&x, &y)| x - y)
            .collect();
        let out = self.push(m, n, data);
        self.ops.push(Op::Sub { a, b, out });
        out
    }

    pub fn scaled_mean_sq(&mut self, a: BufId, scale: f64) -> BufId {
        let len = self.bufs[a].data.len();
        let mut acc = Dual::ZERO;
        for &x in &self.bufs[a].data {
            acc += x * x;
        }
        let data = vec![acc.scale(scale / len as f64)];
        let out = self.push(1, 1, data);
        self.ops.push(Op::ScaledMeanSq { a, out, scale });
        out
    }

    /// Reverse pass seeded with adjoint 1 at `root` (which must be a scalar).
    /// Returns one adjoint vector per buffer, in buffer layout.
    pub fn backward(&self, root: BufId) -> Vec<Vec<Dual>> {
        assert_eq!(self.bufs[root].data.len(), 1, "backward seed must be scalar");
        let mut adj: Vec<Vec<Dual>> = self.bufs.iter().map(|b| b.zeros_like()).collect();
        adj[root][0] = Dual::constant(1.0);
        for op in self.ops.iter().rev() {
            match *op {
                Op::MatMul { a, b, out } => {
                    let (m, k) = (self.bufs[a].rows, self.bufs[a].cols);
                    let n = self.bufs[b].cols;
                    let adj_out = adj[out].clone();
                    for i in 0..m {
                        for j in 0..n {
                            let o = adj_out[i * n + j];
                            for p in 0..k {
                                let av = self.bufs[a].data[i * k + p];
                                let bv = self.bufs[b].data[p * n + j];
                                adj[a][i * k + p] += o * bv;
                                adj[b][p * n + j] += av * o;
                            }
                        }
                    }
                }
                Op::AddRow { a, bias, out } => {
                    let (m, n) = (self.bufs[a].rows, self.bufs[a].cols);
                    let adj_out = adj[out].clone();
                    for (i, &o) in adj_out.iter().enumerate() {
                        adj[a][i] += o;
                    }
                    for i in 0..m {
                        for j in 0..n {
                            adj[bias][j] += adj_out[i * n + j];
                        }
                    }
                }
                Op::Tanh { a, out } => {
                    let adj_out = adj[out].clone();
                    for i in 0..adj_out.len() {
                        let t = self.bufs[out].data[i];
                        let one_minus_t2 = Dual::constant(1.0) - t * t;
                        adj[a][i] += adj_out[i] * one_minus_t2;
                    }
                }
                Op::Sub { a, b, out } => {
                    let adj_out = adj[out].clone();
                    for i in 0..adj_out.len() {
                        adj[a][i] += adj_out[i];
                        adj[b][i] -= adj_out[i];
                    }
                }
                Op::ScaledMeanSq { a, out, scale } => {
                    let o = adj[out][0];
                    let c = 2.0 * scale / self.bufs[a].data.len() as f64;
                    for i in 0..adj[a].len() {
                        let x = self.bufs[a].data[i];
                        adj[a][i] += o * x.scale(c);
                    }
                }
            }
        }
        adj
    }
}
