//! Tape-based reverse-mode automatic differentiation.
//!
//! Every node is a 2-D matrix (scalars are 1x1, vectors 1xN). A tape records
//! the forward pass and is rebuilt per training step; [`Tape::backward`] walks
//! it once in reverse, accumulating gradients additively. Tensors, parameters
//! and checkpoints are float32; node values and gradients are carried in f64
//! inside a tape so finite-difference checks are not drowned by rounding, and
//! are rounded back to f32 at the [`Tensor`] boundary.

use crate::tensor::{Tensor, TensorError};

/// Handle to a tape node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Matmul(Var, Var),
    Add(Var, Var),
    AddBias(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Neg(Var),
    Scale(Var, f64),
    AddScalar(Var),
    Relu(Var),
    Tanh(Var),
    Sigmoid(Var),
    Exp(Var),
    Log(Var),
    Abs(Var),
    Sum(Var),
    Mean(Var),
    ColMax(Var, Vec<usize>),
    Softmax(Var),
    LogSoftmax(Var),
    GatherRows(Var, Vec<usize>),
    ScatterAddRows(Var, Vec<usize>),
    ConcatCols(Vec<Var>),
    PickPerRow(Var, Vec<usize>),
    Minimum(Var, Var),
    Clamp(Var, f64, f64),
}

struct Node {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
    op: Op,
    requires_grad: bool,
}

/// Recorded computation; owns values and, after `backward`, gradients.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
}

fn err(op: &str, a: (usize, usize), b: (usize, usize)) -> TensorError {
    TensorError::ShapeMismatch {
        op: op.to_string(),
        lhs: vec![a.0, a.1],
        rhs: vec![b.0, b.1],
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    fn push(&mut self, rows: usize, cols: usize, data: Vec<f64>, op: Op, rg: bool) -> Var {
        debug_assert_eq!(rows * cols, data.len());
        self.nodes.push(Node {
            rows,
            cols,
            data,
            op,
            requires_grad: rg,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].data
    }

    /// First element as f32; handy for scalar losses.
    pub fn scalar_value(&self, v: Var) -> f32 {
        self.nodes[v.0].data[0] as f32
    }

    pub fn value_f32(&self, v: Var) -> Vec<f32> {
        self.nodes[v.0].data.iter().map(|&x| x as f32).collect()
    }

    pub fn shape2(&self, v: Var) -> (usize, usize) {
        let n = &self.nodes[v.0];
        (n.rows, n.cols)
    }

    pub fn to_tensor(&self, v: Var) -> Tensor {
        let n = &self.nodes[v.0];
        Tensor::new(vec![n.rows, n.cols], n.data.iter().map(|&x| x as f32).collect())
            .expect("tape node is consistent")
    }

    /// Gradient of a node after `backward`. Requires-grad leaves that the loss
    /// never touched report all-zero gradients.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn grad_f32(&self, v: Var) -> Option<Vec<f32>> {
        self.grad(v).map(|g| g.iter().map(|&x| x as f32).collect())
    }

    /// Leaf that participates in differentiation.
    pub fn param(&mut self, t: &Tensor) -> Var {
        let (r, c) = t.dims2();
        let data = t.data().iter().map(|&x| x as f64).collect();
        self.push(r, c, data, Op::Leaf, true)
    }

    /// Leaf treated as a constant.
    pub fn constant(&mut self, t: &Tensor) -> Var {
        let (r, c) = t.dims2();
        let data = t.data().iter().map(|&x| x as f64).collect();
        self.push(r, c, data, Op::Leaf, false)
    }

    pub fn constant_row(&mut self, xs: &[f32]) -> Var {
        let data = xs.iter().map(|&x| x as f64).collect();
        self.push(1, xs.len(), data, Op::Leaf, false)
    }

    pub fn constant_scalar(&mut self, x: f32) -> Var {
        self.push(1, 1, vec![x as f64], Op::Leaf, false)
    }

    pub fn constant_matrix(&mut self, rows: usize, cols: usize, data: Vec<f32>) -> Var {
        assert_eq!(rows * cols, data.len());
        let data = data.iter().map(|&x| x as f64).collect();
        self.push(rows, cols, data, Op::Leaf, false)
    }

    // ---- arithmetic ----

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (m, k) = self.shape2(a);
        let (k2, n) = self.shape2(b);
        if k != k2 {
            return Err(err("matmul", (m, k), (k2, n)));
        }
        let mut out = vec![0.0f64; m * n];
        {
            let av = &self.nodes[a.0].data;
            let bv = &self.nodes[b.0].data;
            for i in 0..m {
                for p in 0..k {
                    let x = av[i * k + p];
                    if x == 0.0 {
                        continue;
                    }
                    let brow = &bv[p * n..(p + 1) * n];
                    let orow = &mut out[i * n..(i + 1) * n];
                    for j in 0..n {
                        orow[j] += x * brow[j];
                    }
                }
            }
        }
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(m, n, out, Op::Matmul(a, b), rg))
    }

    fn elementwise(
        &mut self,
        opname: &str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var, TensorError> {
        let sa = self.shape2(a);
        let sb = self.shape2(b);
        if sa != sb {
            return Err(err(opname, sa, sb));
        }
        let data = self.nodes[a.0]
            .data
            .iter()
            .zip(&self.nodes[b.0].data)
            .map(|(&x, &y)| f(x, y))
            .collect();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(sa.0, sa.1, data, op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.elementwise("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.elementwise("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.elementwise("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn minimum(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        // Tie routes gradient to `a`.
        self.elementwise("minimum", a, b, |x, y| if x <= y { x } else { y }, Op::Minimum(a, b))
    }

    /// Matrix plus broadcast row vector.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var, TensorError> {
        let (m, n) = self.shape2(a);
        let sb = self.shape2(bias);
        if sb != (1, n) {
            return Err(err("add_bias", (m, n), sb));
        }
        let mut data = self.nodes[a.0].data.clone();
        let bv = self.nodes[bias.0].data.clone();
        for i in 0..m {
            for j in 0..n {
                data[i * n + j] += bv[j];
            }
        }
        let rg = self.rg(a) || self.rg(bias);
        Ok(self.push(m, n, data, Op::AddBias(a, bias), rg))
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let (r, c) = self.shape2(a);
        let data = self.nodes[a.0].data.iter().map(|&x| f(x)).collect();
        let rg = self.rg(a);
        self.push(r, c, data, op, rg)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.unary(a, |x| -x, Op::Neg(a))
    }

    pub fn scale(&mut self, a: Var, c: f32) -> Var {
        let c = c as f64;
        self.unary(a, |x| c * x, Op::Scale(a, c))
    }

    pub fn add_scalar(&mut self, a: Var, c: f32) -> Var {
        let c = c as f64;
        self.unary(a, |x| x + c, Op::AddScalar(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.max(0.0), Op::Relu(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.tanh(), Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, |x| 1.0 / (1.0 + (-x).exp()), Op::Sigmoid(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.exp(), Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.ln(), Op::Log(a))
    }

    pub fn abs(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.abs(), Op::Abs(a))
    }

    pub fn clamp(&mut self, a: Var, lo: f32, hi: f32) -> Var {
        let (lo, hi) = (lo as f64, hi as f64);
        self.unary(a, |x| x.clamp(lo, hi), Op::Clamp(a, lo, hi))
    }

    // ---- reductions ----

    pub fn sum(&mut self, a: Var) -> Var {
        let acc: f64 = self.nodes[a.0].data.iter().sum();
        let rg = self.rg(a);
        self.push(1, 1, vec![acc], Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.nodes[a.0].data.len().max(1);
        let acc: f64 = self.nodes[a.0].data.iter().sum();
        let rg = self.rg(a);
        self.push(1, 1, vec![acc / n as f64], Op::Mean(a), rg)
    }

    /// Column-wise max over rows: [n, d] -> [1, d]. Gradient routes to the
    /// first attaining row.
    pub fn col_max(&mut self, a: Var) -> Var {
        let (m, n) = self.shape2(a);
        assert!(m > 0, "col_max over empty matrix");
        let av = &self.nodes[a.0].data;
        let mut out = vec![f64::NEG_INFINITY; n];
        let mut arg = vec![0usize; n];
        for i in 0..m {
            for j in 0..n {
                let v = av[i * n + j];
                if v > out[j] {
                    out[j] = v;
                    arg[j] = i;
                }
            }
        }
        let rg = self.rg(a);
        self.push(1, n, out, Op::ColMax(a, arg), rg)
    }

    // ---- row-wise softmax family ----

    fn rowwise_logsoftmax(data: &[f64], rows: usize, cols: usize) -> Vec<f64> {
        let mut out = vec![0.0f64; data.len()];
        for i in 0..rows {
            let row = &data[i * cols..(i + 1) * cols];
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|&x| (x - mx).exp()).sum();
            let lz = z.ln() + mx;
            for j in 0..cols {
                out[i * cols + j] = row[j] - lz;
            }
        }
        out
    }

    pub fn softmax(&mut self, a: Var) -> Var {
        let (m, n) = self.shape2(a);
        let ls = Self::rowwise_logsoftmax(&self.nodes[a.0].data, m, n);
        let data = ls.iter().map(|&x| x.exp()).collect();
        let rg = self.rg(a);
        self.push(m, n, data, Op::Softmax(a), rg)
    }

    pub fn log_softmax(&mut self, a: Var) -> Var {
        let (m, n) = self.shape2(a);
        let data = Self::rowwise_logsoftmax(&self.nodes[a.0].data, m, n);
        let rg = self.rg(a);
        self.push(m, n, data, Op::LogSoftmax(a), rg)
    }

    // ---- indexing ----

    /// Select rows by index; duplicates allowed.
    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Var {
        let (m, n) = self.shape2(a);
        let av = &self.nodes[a.0].data;
        let mut data = Vec::with_capacity(idx.len() * n);
        for &i in idx {
            assert!(i < m, "gather_rows index {i} out of {m}");
            data.extend_from_slice(&av[i * n..(i + 1) * n]);
        }
        let rg = self.rg(a);
        self.push(idx.len(), n, data, Op::GatherRows(a, idx.to_vec()), rg)
    }

    /// Sum rows of `a` into `n_out` destination rows: row i adds into
    /// `dst[i]`. Used for neighborhood aggregation.
    pub fn scatter_add_rows(&mut self, a: Var, dst: &[usize], n_out: usize) -> Var {
        let (m, n) = self.shape2(a);
        assert_eq!(m, dst.len(), "scatter_add_rows index count");
        let av = &self.nodes[a.0].data;
        let mut acc = vec![0.0f64; n_out * n];
        for (i, &d) in dst.iter().enumerate() {
            assert!(d < n_out, "scatter_add_rows dst {d} out of {n_out}");
            for j in 0..n {
                acc[d * n + j] += av[i * n + j];
            }
        }
        let rg = self.rg(a);
        self.push(n_out, n, acc, Op::ScatterAddRows(a, dst.to_vec()), rg)
    }

    /// Horizontal concatenation; all inputs must share the row count.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        assert!(!parts.is_empty());
        let (m, _) = self.shape2(parts[0]);
        let mut total = 0;
        for &p in parts {
            let (r, c) = self.shape2(p);
            if r != m {
                return Err(err("concat_cols", (m, 0), (r, c)));
            }
            total += c;
        }
        let mut data = Vec::with_capacity(m * total);
        for i in 0..m {
            for &p in parts {
                let (_, c) = self.shape2(p);
                let pv = &self.nodes[p.0].data;
                data.extend_from_slice(&pv[i * c..(i + 1) * c]);
            }
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(m, total, data, Op::ConcatCols(parts.to_vec()), rg))
    }

    /// Per-row element pick: out[i] = a[i, cols[i]], shape [n, 1].
    pub fn pick_per_row(&mut self, a: Var, cols: &[usize]) -> Var {
        let (m, n) = self.shape2(a);
        assert_eq!(m, cols.len(), "pick_per_row index count");
        let av = &self.nodes[a.0].data;
        let data = cols
            .iter()
            .enumerate()
            .map(|(i, &j)| {
                assert!(j < n, "pick_per_row col {j} out of {n}");
                av[i * n + j]
            })
            .collect();
        let rg = self.rg(a);
        self.push(m, 1, data, Op::PickPerRow(a, cols.to_vec()), rg)
    }

    // ---- backward ----

    /// Reverse sweep from a scalar loss. Visits each node exactly once;
    /// gradients accumulate additively into every requires-grad node.
    pub fn backward(&mut self, loss: Var) -> Result<(), TensorError> {
        let (r, c) = self.shape2(loss);
        if (r, c) != (1, 1) {
            return Err(TensorError::NotScalar {
                op: "backward".to_string(),
                shape: vec![r, c],
            });
        }
        self.grads = self
            .nodes
            .iter()
            .map(|n| {
                if n.requires_grad {
                    Some(vec![0.0f64; n.data.len()])
                } else {
                    None
                }
            })
            .collect();
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        self.grads[loss.0].as_mut().expect("loss grad")[0] = 1.0;

        for id in (0..=loss.0).rev() {
            if self.grads[id].is_none() {
                continue;
            }
            let g = self.grads[id].take().expect("taken above");
            self.propagate(id, &g);
            self.grads[id] = Some(g);
        }
        Ok(())
    }

    fn add_grad(&mut self, v: Var, delta: &[f64]) {
        if let Some(g) = self.grads[v.0].as_mut() {
            for (gi, &d) in g.iter_mut().zip(delta) {
                *gi += d;
            }
        }
    }

    fn propagate(&mut self, id: usize, g: &[f64]) {
        match &self.nodes[id].op {
            Op::Leaf => {}
            Op::Matmul(a, b) => {
                let (a, b) = (*a, *b);
                let (m, k) = self.shape2(a);
                let (_, n) = self.shape2(b);
                let av = self.nodes[a.0].data.clone();
                let bv = self.nodes[b.0].data.clone();
                if self.rg(a) {
                    let mut ga = vec![0.0f64; m * k];
                    for i in 0..m {
                        for p in 0..k {
                            let mut acc = 0.0f64;
                            for j in 0..n {
                                acc += g[i * n + j] * bv[p * n + j];
                            }
                            ga[i * k + p] = acc;
                        }
                    }
                    self.add_grad(a, &ga);
                }
                if self.rg(b) {
                    let mut gb = vec![0.0f64; k * n];
                    for i in 0..m {
                        for p in 0..k {
                            let x = av[i * k + p];
                            if x == 0.0 {
                                continue;
                            }
                            for j in 0..n {
                                gb[p * n + j] += x * g[i * n + j];
                            }
                        }
                    }
                    self.add_grad(b, &gb);
                }
            }
            Op::Add(a, b) => {
                let (a, b) = (*a, *b);
                self.add_grad(a, g);
                self.add_grad(b, g);
            }
            Op::Sub(a, b) => {
                let (a, b) = (*a, *b);
                self.add_grad(a, g);
                let neg: Vec<f64> = g.iter().map(|&x| -x).collect();
                self.add_grad(b, &neg);
            }
            Op::AddBias(a, bias) => {
                let (a, bias) = (*a, *bias);
                let (m, n) = self.shape2(a);
                self.add_grad(a, g);
                if self.rg(bias) {
                    let mut gb = vec![0.0f64; n];
                    for i in 0..m {
                        for j in 0..n {
                            gb[j] += g[i * n + j];
                        }
                    }
                    self.add_grad(bias, &gb);
                }
            }
            Op::Mul(a, b) => {
                let (a, b) = (*a, *b);
                let av = self.nodes[a.0].data.clone();
                let bv = self.nodes[b.0].data.clone();
                let ga: Vec<f64> = g.iter().zip(&bv).map(|(&gi, &y)| gi * y).collect();
                let gb: Vec<f64> = g.iter().zip(&av).map(|(&gi, &x)| gi * x).collect();
                self.add_grad(a, &ga);
                self.add_grad(b, &gb);
            }
            Op::Minimum(a, b) => {
                let (a, b) = (*a, *b);
                let av = self.nodes[a.0].data.clone();
                let bv = self.nodes[b.0].data.clone();
                let ga: Vec<f64> = g
                    .iter()
                    .zip(av.iter().zip(&bv))
                    .map(|(&gi, (&x, &y))| if x <= y { gi } else { 0.0 })
                    .collect();
                let gb: Vec<f64> = g
                    .iter()
                    .zip(av.iter().zip(&bv))
                    .map(|(&gi, (&x, &y))| if x <= y { 0.0 } else { gi })
                    .collect();
                self.add_grad(a, &ga);
                self.add_grad(b, &gb);
            }
            Op::Neg(a) => {
                let a = *a;
                let ga: Vec<f64> = g.iter().map(|&x| -x).collect();
                self.add_grad(a, &ga);
            }
            Op::Scale(a, c) => {
                let (a, c) = (*a, *c);
                let ga: Vec<f64> = g.iter().map(|&x| c * x).collect();
                self.add_grad(a, &ga);
            }
            Op::AddScalar(a) => {
                let a = *a;
                self.add_grad(a, g);
            }
            Op::Relu(a) => {
                let a = *a;
                let av = self.nodes[a.0].data.clone();
                let ga: Vec<f64> = g
                    .iter()
                    .zip(&av)
                    .map(|(&gi, &x)| if x > 0.0 { gi } else { 0.0 })
                    .collect();
                self.add_grad(a, &ga);
            }
            Op::Tanh(a) => {
                let a = *a;
                let yv = self.nodes[id].data.clone();
                let ga: Vec<f64> = g.iter().zip(&yv).map(|(&gi, &y)| gi * (1.0 - y * y)).collect();
                self.add_grad(a, &ga);
            }
            Op::Sigmoid(a) => {
                let a = *a;
                let yv = self.nodes[id].data.clone();
                let ga: Vec<f64> = g
                    .iter()
                    .zip(&yv)
                    .map(|(&gi, &y)| gi * y * (1.0 - y))
                    .collect();
                self.add_grad(a, &ga);
            }
            Op::Exp(a) => {
                let a = *a;
                let yv = self.nodes[id].data.clone();
                let ga: Vec<f64> = g.iter().zip(&yv).map(|(&gi, &y)| gi * y).collect();
                self.add_grad(a, &ga);
            }
            Op::Log(a) => {
                let a = *a;
                let av = self.nodes[a.0].data.clone();
                let ga: Vec<f64> = g.iter().zip(&av).map(|(&gi, &x)| gi / x).collect();
                self.add_grad(a, &ga);
            }
            Op::Abs(a) => {
                let a = *a;
                let av = self.nodes[a.0].data.clone();
                let ga: Vec<f64> = g
                    .iter()
                    .zip(&av)
                    .map(|(&gi, &x)| {
                        if x > 0.0 {
                            gi
                        } else if x < 0.0 {
                            -gi
                        } else {
                            0.0
                        }
                    })
                    .collect();
                self.add_grad(a, &ga);
            }
            Op::Clamp(a, lo, hi) => {
                let (a, lo, hi) = (*a, *lo, *hi);
                let av = self.nodes[a.0].data.clone();
                let ga: Vec<f64> = g
                    .iter()
                    .zip(&av)
                    .map(|(&gi, &x)| if x >= lo && x <= hi { gi } else { 0.0 })
                    .collect();
                self.add_grad(a, &ga);
            }
            Op::Sum(a) => {
                let a = *a;
                let n = self.nodes[a.0].data.len();
                let ga = vec![g[0]; n];
                self.add_grad(a, &ga);
            }
            Op::Mean(a) => {
                let a = *a;
                let n = self.nodes[a.0].data.len().max(1);
                let ga = vec![g[0] / n as f64; n];
                self.add_grad(a, &ga);
            }
            Op::ColMax(a, arg) => {
                let a = *a;
                let arg = arg.clone();
                let (_, n) = self.shape2(a);
                let mut ga = vec![0.0f64; self.nodes[a.0].data.len()];
                for (j, &i) in arg.iter().enumerate() {
                    ga[i * n + j] = g[j];
                }
                self.add_grad(a, &ga);
            }
            Op::Softmax(a) => {
                let a = *a;
                let (m, n) = self.shape2(a);
                let yv = self.nodes[id].data.clone();
                let mut ga = vec![0.0f64; m * n];
                for i in 0..m {
                    let mut dot = 0.0f64;
                    for j in 0..n {
                        dot += g[i * n + j] * yv[i * n + j];
                    }
                    for j in 0..n {
                        ga[i * n + j] = yv[i * n + j] * (g[i * n + j] - dot);
                    }
                }
                self.add_grad(a, &ga);
            }
            Op::LogSoftmax(a) => {
                let a = *a;
                let (m, n) = self.shape2(a);
                let yv = self.nodes[id].data.clone();
                let mut ga = vec![0.0f64; m * n];
                for i in 0..m {
                    let mut gsum = 0.0f64;
                    for j in 0..n {
                        gsum += g[i * n + j];
                    }
                    for j in 0..n {
                        ga[i * n + j] = g[i * n + j] - yv[i * n + j].exp() * gsum;
                    }
                }
                self.add_grad(a, &ga);
            }
            Op::GatherRows(a, idx) => {
                let a = *a;
                let idx = idx.clone();
                let (_, n) = self.shape2(a);
                let mut ga = vec![0.0f64; self.nodes[a.0].data.len()];
                for (row, &i) in idx.iter().enumerate() {
                    for j in 0..n {
                        ga[i * n + j] += g[row * n + j];
                    }
                }
                self.add_grad(a, &ga);
            }
            Op::ScatterAddRows(a, dst) => {
                let a = *a;
                let dst = dst.clone();
                let (_, n) = self.shape2(a);
                let mut ga = vec![0.0f64; self.nodes[a.0].data.len()];
                for (row, &d) in dst.iter().enumerate() {
                    for j in 0..n {
                        ga[row * n + j] = g[d * n + j];
                    }
                }
                self.add_grad(a, &ga);
            }
            Op::ConcatCols(parts) => {
                let parts = parts.clone();
                let (m, total) = {
                    let n = &self.nodes[id];
                    (n.rows, n.cols)
                };
                let mut offset = 0;
                for p in parts {
                    let (_, c) = self.shape2(p);
                    if self.rg(p) {
                        let mut gp = vec![0.0f64; m * c];
                        for i in 0..m {
                            for j in 0..c {
                                gp[i * c + j] = g[i * total + offset + j];
                            }
                        }
                        self.add_grad(p, &gp);
                    }
                    offset += c;
                }
            }
            Op::PickPerRow(a, cols) => {
                let a = *a;
                let cols = cols.clone();
                let (_, n) = self.shape2(a);
                let mut ga = vec![0.0f64; self.nodes[a.0].data.len()];
                for (i, &j) in cols.iter().enumerate() {
                    ga[i * n + j] = g[i];
                }
                self.add_grad(a, &ga);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcheck::{finite_difference_grad, grad_rel_err};
    use crate::Rng;

    #[test]
    fn softmax_symmetry() {
        let mut t = Tape::new();
        let x = t.constant_row(&[0.0, 0.0]);
        let s = t.softmax(x);
        assert_eq!(t.value(s), &[0.5, 0.5]);
    }

    #[test]
    fn matmul_identity() {
        let mut t = Tape::new();
        let eye = t.constant_matrix(3, 3, vec![1., 0., 0., 0., 1., 0., 0., 0., 1.]);
        let a = t.constant_matrix(3, 2, vec![1., 2., 3., 4., 5., 6.]);
        let out = t.matmul(eye, a).unwrap();
        assert_eq!(t.value(out), t.value(a));
    }

    #[test]
    fn exp_log_inverse() {
        let mut t = Tape::new();
        let x = t.constant_row(&[1.0, 2.0, 3.0]);
        let l = t.log(x);
        let e = t.exp(l);
        let s = t.sum(e);
        assert!((t.value(s)[0] - 6.0).abs() < 1e-6);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let mut t = Tape::new();
        let a = t.constant_matrix(2, 3, vec![0.0; 6]);
        let b = t.constant_matrix(2, 2, vec![0.0; 4]);
        let e = t.matmul(a, b).unwrap_err();
        let msg = e.to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("[2, 2]"), "{msg}");
    }

    #[test]
    fn backward_square_sum() {
        // loss = sum(w * w), w = [1, 2] -> grad = [2, 4]
        let mut t = Tape::new();
        let w = t.param(&Tensor::vector(vec![1.0, 2.0]));
        let sq = t.mul(w, w).unwrap();
        let loss = t.sum(sq);
        t.backward(loss).unwrap();
        assert_eq!(t.grad(w).unwrap(), &[2.0, 4.0]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut t = Tape::new();
        let w = t.param(&Tensor::vector(vec![1.0, 2.0]));
        let y = t.relu(w);
        assert!(matches!(
            t.backward(y),
            Err(TensorError::NotScalar { .. })
        ));
    }

    #[test]
    fn unused_parameter_grad_is_zero() {
        let mut t = Tape::new();
        let used = t.param(&Tensor::vector(vec![1.0]));
        let unused = t.param(&Tensor::vector(vec![5.0, 5.0]));
        let loss = t.sum(used);
        t.backward(loss).unwrap();
        assert_eq!(t.grad(unused).unwrap(), &[0.0, 0.0]);
    }

    #[test]
    fn grad_accumulates_over_reuse() {
        // loss = sum(w) + sum(w) -> grad = 2 per element
        let mut t = Tape::new();
        let w = t.param(&Tensor::vector(vec![1.0, 1.0]));
        let s1 = t.sum(w);
        let s2 = t.sum(w);
        let loss = t.add(s1, s2).unwrap();
        t.backward(loss).unwrap();
        assert_eq!(t.grad(w).unwrap(), &[2.0, 2.0]);
    }

    /// Composite expression exercising most ops against finite differences.
    fn composite_loss(x: &[f32]) -> f64 {
        let mut t = Tape::new();
        let w = t.param(&Tensor::new(vec![2, 4], x.to_vec()).unwrap());
        let m = t.constant_matrix(4, 3, (0..12).map(|i| 0.1 * (i as f32 - 6.0)).collect());
        let h = t.matmul(w, m).unwrap();
        let a = t.tanh(h);
        let b = t.sigmoid(h);
        let c = t.add(a, b).unwrap();
        let ls = t.log_softmax(c);
        let p = t.pick_per_row(ls, &[1, 2]);
        let s1 = t.sum(p);
        let mx = t.col_max(c);
        let s2 = t.mean(mx);
        let e = t.scale(s2, 0.5);
        let loss = t.add(s1, e).unwrap();
        t.value(loss)[0]
    }

    #[test]
    fn composite_matches_finite_differences() {
        let mut rng = Rng::from_seed(11);
        let x: Vec<f32> = (0..8).map(|_| rng.uniform_in(-1.0, 1.0)).collect();

        let analytic = {
            let mut t = Tape::new();
            let w = t.param(&Tensor::new(vec![2, 4], x.clone()).unwrap());
            let m = t.constant_matrix(4, 3, (0..12).map(|i| 0.1 * (i as f32 - 6.0)).collect());
            let h = t.matmul(w, m).unwrap();
            let a = t.tanh(h);
            let b = t.sigmoid(h);
            let c = t.add(a, b).unwrap();
            let ls = t.log_softmax(c);
            let p = t.pick_per_row(ls, &[1, 2]);
            let s1 = t.sum(p);
            let mx = t.col_max(c);
            let s2 = t.mean(mx);
            let e = t.scale(s2, 0.5);
            let loss = t.add(s1, e).unwrap();
            t.backward(loss).unwrap();
            t.grad(w).unwrap().to_vec()
        };
        let numeric = finite_difference_grad(composite_loss, &x, 1e-3);
        let err = grad_rel_err(&analytic, &numeric);
        assert!(err < 1e-4, "rel err {err}");
    }

    #[test]
    fn scatter_gather_roundtrip_grad() {
        let x = vec![0.3f32, -0.2, 0.7, 0.1, -0.5, 0.9];
        let f = |x: &[f32]| {
            let mut t = Tape::new();
            let w = t.param(&Tensor::new(vec![3, 2], x.to_vec()).unwrap());
            let gathered = t.gather_rows(w, &[2, 0, 0, 1]);
            let scattered = t.scatter_add_rows(gathered, &[0, 0, 1, 1], 2);
            let sq = t.mul(scattered, scattered).unwrap();
            let loss = t.sum(sq);
            t.value(loss)[0]
        };
        let analytic = {
            let mut t = Tape::new();
            let w = t.param(&Tensor::new(vec![3, 2], x.clone()).unwrap());
            let gathered = t.gather_rows(w, &[2, 0, 0, 1]);
            let scattered = t.scatter_add_rows(gathered, &[0, 0, 1, 1], 2);
            let sq = t.mul(scattered, scattered).unwrap();
            let loss = t.sum(sq);
            t.backward(loss).unwrap();
            t.grad(w).unwrap().to_vec()
        };
        let numeric = finite_difference_grad(f, &x, 1e-3);
        let err = grad_rel_err(&analytic, &numeric);
        assert!(err < 1e-4, "rel err {err}");
    }

    #[test]
    fn minimum_and_clamp_grads() {
        let x = vec![0.5f32, -1.5, 2.5];
        let analytic = {
            let mut t = Tape::new();
            let w = t.param(&Tensor::vector(x.clone()));
            let c = t.clamp(w, -1.0, 1.0);
            let k = t.constant_row(&[0.2, 0.2, 0.2]);
            let m = t.minimum(c, k).unwrap();
            let loss = t.sum(m);
            t.backward(loss).unwrap();
            t.grad(w).unwrap().to_vec()
        };
        // 0.5 -> clamp passes but min picks the 0.2 constant -> 0;
        // -1.5 and 2.5 -> clamp cuts -> 0.
        assert_eq!(analytic, vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn determinism_same_seed_bitwise() {
        let run = || {
            let mut rng = Rng::from_seed(99);
            let mut t = Tape::new();
            let w = t.param(&Tensor::init_uniform(3, 3, 3, &mut rng));
            let x = t.constant_row(&[0.1, 0.2, 0.3]);
            let h = t.matmul(x, w).unwrap();
            let y = t.tanh(h);
            let loss = t.sum(y);
            t.backward(loss).unwrap();
            (t.value(loss).to_vec(), t.grad(w).unwrap().to_vec())
        };
        let (l1, g1) = run();
        let (l2, g2) = run();
        assert_eq!(l1, l2);
        assert_eq!(g1, g2);
    }
}
