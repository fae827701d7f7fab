//! Reverse-mode automatic differentiation on a Wengert tape.
//!
//! A [`Graph`] owns an arena of nodes. Every primitive evaluates eagerly,
//! stores its output tensor, and records which nodes fed it. [`Graph::backward`]
//! consumes the graph and replays the record once, in exact reverse execution
//! order, accumulating vector–Jacobian products into per-node buffers.
//!
//! Graphs are rebuilt from scratch for every training step (dynamic taping):
//! node ids are plain indices, nothing is freed or reused, and a graph is
//! never shared across threads.

use alloc::vec;
use alloc::vec::Vec;

use crate::fmath;
use crate::tensor::{gemm, matmul_dims, Tensor, TensorError};

/// Handle to a node in a [`Graph`]. Only meaningful for the graph that
/// created it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Clamp(Var, f64, f64),
    Gelu(Var),
    Sigmoid(Var),
    Sin(Var),
    Cos(Var),
    Log(Var),
    Matmul {
        a: Var,
        b: Var,
        batch: usize,
        m: usize,
        k: usize,
        n: usize,
        a_batched: bool,
        b_batched: bool,
    },
    Transpose(Var),
    BiasAdd(Var, Var),
    Softmax {
        x: Var,
        axis: usize,
    },
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        eps: f64,
    },
    Concat {
        parts: Vec<Var>,
        axis: usize,
    },
    Slice {
        x: Var,
        axis: usize,
        start: usize,
        len: usize,
    },
    SumAll(Var),
    MeanAll(Var),
    SumAxis {
        x: Var,
        axis: usize,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Gradients produced by [`Graph::backward`]: one tensor per leaf that
/// required a gradient and was reachable from the loss.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    /// How many recorded operations had their adjoint applied — each exactly
    /// once, in reverse execution order.
    pub ops_visited: usize,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

/// The tape. See module docs.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

// Split a shape at `axis` into (outer, len, inner) lane geometry.
fn lanes(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer: usize = shape[..axis].iter().product();
    let len = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    (outer, len, inner)
}

impl Graph {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    /// Total number of nodes, leaves included.
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Number of recorded operations (non-leaf nodes).
    pub fn op_count(&self) -> usize {
        self.nodes.iter().filter(|n| !matches!(n.op, Op::Leaf)).count()
    }

    /// Insert a tensor as a leaf. Whether gradients flow to it is taken from
    /// `t.requires_grad`.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        let needs = t.requires_grad;
        self.push(t, Op::Leaf, needs)
    }

    /// Insert a non-differentiable input (ignores any `requires_grad` flag).
    pub fn constant(&mut self, mut t: Tensor) -> Var {
        t.requires_grad = false;
        self.push(t, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    // ── Elementwise binary ops ───────────────────────────────────────────

    fn zip_same_shape(
        &mut self,
        op_name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var, TensorError> {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if ta.shape() != tb.shape() {
            return Err(TensorError::ShapeMismatch {
                op: op_name,
                lhs: ta.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            });
        }
        let data: Vec<f64> = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(x, y)| f(*x, *y))
            .collect();
        let out = Tensor::new(ta.shape().to_vec(), data).expect("shape preserved");
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(out, op, needs))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.zip_same_shape("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.zip_same_shape("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.zip_same_shape("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.zip_same_shape("div", a, b, |x, y| x / y, Op::Div(a, b))
    }

    // ── Elementwise unary ops ────────────────────────────────────────────

    fn map_unary(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let t = &self.nodes[x.0].value;
        let out = Tensor::new(t.shape().to_vec(), t.data().iter().map(|v| f(*v)).collect())
            .expect("shape preserved");
        let needs = self.needs(x);
        self.push(out, op, needs)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        self.map_unary(x, |v| c * v, Op::Scale(x, c))
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        self.map_unary(x, |v| v + c, Op::AddScalar(x))
    }

    /// Clamp into `[lo, hi]`. The adjoint passes gradient only through
    /// strictly interior values.
    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        self.map_unary(
            x,
            |v| {
                if v < lo {
                    lo
                } else if v > hi {
                    hi
                } else {
                    v
                }
            },
            Op::Clamp(x, lo, hi),
        )
    }

    /// Exact GELU: `0.5·x·(1 + erf(x/√2))`.
    pub fn gelu(&mut self, x: Var) -> Var {
        self.map_unary(x, gelu_val, Op::Gelu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.map_unary(x, sigmoid_val, Op::Sigmoid(x))
    }

    pub fn sin(&mut self, x: Var) -> Var {
        self.map_unary(x, fmath::sin, Op::Sin(x))
    }

    pub fn cos(&mut self, x: Var) -> Var {
        self.map_unary(x, fmath::cos, Op::Cos(x))
    }

    /// Natural log. The caller keeps inputs positive (losses clamp first).
    pub fn log(&mut self, x: Var) -> Var {
        self.map_unary(x, fmath::ln, Op::Log(x))
    }

    // ── Linear algebra ───────────────────────────────────────────────────

    /// Matrix product with optional equal-or-absent leading batch dims.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let dims = matmul_dims(
            self.nodes[a.0].value.shape(),
            self.nodes[b.0].value.shape(),
        )?;
        let (m, k, n) = (dims.m, dims.k, dims.n);
        let mut out = Tensor::zeros(&dims.out_shape);
        {
            let ta = self.nodes[a.0].value.data();
            let tb = self.nodes[b.0].value.data();
            for i in 0..dims.batch.max(1) {
                let ao = if dims.a_batched { i * m * k } else { 0 };
                let bo = if dims.b_batched { i * k * n } else { 0 };
                gemm(
                    m,
                    k,
                    n,
                    &ta[ao..ao + m * k],
                    false,
                    &tb[bo..bo + k * n],
                    false,
                    &mut out.data_mut()[i * m * n..(i + 1) * m * n],
                    false,
                );
            }
        }
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(
            out,
            Op::Matmul {
                a,
                b,
                batch: dims.batch.max(1),
                m,
                k,
                n,
                a_batched: dims.a_batched,
                b_batched: dims.b_batched,
            },
            needs,
        ))
    }

    /// Swap the last two axes (leading batch dims untouched).
    pub fn transpose(&mut self, x: Var) -> Result<Var, TensorError> {
        let t = &self.nodes[x.0].value;
        if t.rank() < 2 {
            return Err(TensorError::BadAxis {
                op: "transpose",
                axis: 1,
                rank: t.rank(),
            });
        }
        let out = transpose_last_two(t);
        let needs = self.needs(x);
        Ok(self.push(out, Op::Transpose(x), needs))
    }

    /// Add a length-`d` vector to every row of an `[..., d]` tensor.
    pub fn bias_add(&mut self, x: Var, b: Var) -> Result<Var, TensorError> {
        let (tx, tb) = (&self.nodes[x.0].value, &self.nodes[b.0].value);
        let d = *tx.shape().last().unwrap_or(&0);
        if tb.rank() != 1 || tb.shape()[0] != d || tx.rank() == 0 {
            return Err(TensorError::ShapeMismatch {
                op: "bias_add",
                lhs: tx.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            });
        }
        let mut out = tx.clone();
        out.requires_grad = false;
        for row in out.data_mut().chunks_mut(d) {
            for (o, bv) in row.iter_mut().zip(tb.data()) {
                *o += bv;
            }
        }
        let needs = self.needs(x) || self.needs(b);
        Ok(self.push(out, Op::BiasAdd(x, b), needs))
    }

    // ── Normalizations ───────────────────────────────────────────────────

    /// Numerically stable softmax along `axis` (max subtraction per lane).
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var, TensorError> {
        let t = &self.nodes[x.0].value;
        if axis >= t.rank() {
            return Err(TensorError::BadAxis {
                op: "softmax",
                axis,
                rank: t.rank(),
            });
        }
        let (outer, len, inner) = lanes(t.shape(), axis);
        let mut out = Tensor::zeros(t.shape());
        {
            let src = t.data();
            let dst = out.data_mut();
            for o in 0..outer {
                for i in 0..inner {
                    let at = |j: usize| (o * len + j) * inner + i;
                    let mut mx = f64::NEG_INFINITY;
                    for j in 0..len {
                        mx = mx.max(src[at(j)]);
                    }
                    let mut sum = 0.0;
                    for j in 0..len {
                        let e = fmath::exp(src[at(j)] - mx);
                        dst[at(j)] = e;
                        sum += e;
                    }
                    for j in 0..len {
                        dst[at(j)] /= sum;
                    }
                }
            }
        }
        let needs = self.needs(x);
        Ok(self.push(out, Op::Softmax { x, axis }, needs))
    }

    /// Layer normalization over the last axis with learned gain and bias:
    /// `gain ⊙ (x − μ)/√(σ² + eps) + bias`, biased variance per row.
    pub fn layer_norm(
        &mut self,
        x: Var,
        gain: Var,
        bias: Var,
        eps: f64,
    ) -> Result<Var, TensorError> {
        let tx = &self.nodes[x.0].value;
        let d = *tx.shape().last().unwrap_or(&0);
        for (p, t) in [(gain, "gain"), (bias, "bias")] {
            let tp = &self.nodes[p.0].value;
            if tp.rank() != 1 || tp.shape()[0] != d {
                let _ = t;
                return Err(TensorError::ShapeMismatch {
                    op: "layer_norm",
                    lhs: tx.shape().to_vec(),
                    rhs: tp.shape().to_vec(),
                });
            }
        }
        if tx.rank() == 0 || d == 0 {
            return Err(TensorError::Empty { op: "layer_norm" });
        }
        let mut out = Tensor::zeros(tx.shape());
        {
            let src = tx.data();
            let g = self.nodes[gain.0].value.data();
            let b = self.nodes[bias.0].value.data();
            let dst = out.data_mut();
            for (row_in, row_out) in src.chunks(d).zip(dst.chunks_mut(d)) {
                let mean = row_in.iter().sum::<f64>() / d as f64;
                let var = row_in.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
                let inv = 1.0 / fmath::sqrt(var + eps);
                for j in 0..d {
                    row_out[j] = g[j] * ((row_in[j] - mean) * inv) + b[j];
                }
            }
        }
        let needs = self.needs(x) || self.needs(gain) || self.needs(bias);
        Ok(self.push(out, Op::LayerNorm { x, gain, bias, eps }, needs))
    }

    // ── Structural ops ───────────────────────────────────────────────────

    /// Concatenate along `axis`; all other dims must match.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var, TensorError> {
        if parts.is_empty() {
            return Err(TensorError::Empty { op: "concat" });
        }
        let first = self.nodes[parts[0].0].value.shape().to_vec();
        if axis >= first.len() {
            return Err(TensorError::BadAxis {
                op: "concat",
                axis,
                rank: first.len(),
            });
        }
        let mut axis_total = 0;
        for p in parts {
            let s = self.nodes[p.0].value.shape();
            let compatible = s.len() == first.len()
                && s.iter()
                    .zip(&first)
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(TensorError::ShapeMismatch {
                    op: "concat",
                    lhs: first.clone(),
                    rhs: s.to_vec(),
                });
            }
            axis_total += s[axis];
        }
        let mut out_shape = first.clone();
        out_shape[axis] = axis_total;
        let (outer, _, inner) = lanes(&out_shape, axis);
        let mut out = Tensor::zeros(&out_shape);
        {
            let dst = out.data_mut();
            let row_out = axis_total * inner;
            let mut col_off = 0;
            for p in parts {
                let t = &self.nodes[p.0].value;
                let len_p = t.shape()[axis];
                let block = len_p * inner;
                for o in 0..outer {
                    let s = &t.data()[o * block..(o + 1) * block];
                    dst[o * row_out + col_off..o * row_out + col_off + block].copy_from_slice(s);
                }
                col_off += block;
            }
        }
        let needs = parts.iter().any(|p| self.needs(*p));
        Ok(self.push(
            out,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
            needs,
        ))
    }

    /// Take `[start, start+len)` along `axis`.
    pub fn slice(
        &mut self,
        x: Var,
        axis: usize,
        start: usize,
        len: usize,
    ) -> Result<Var, TensorError> {
        let t = &self.nodes[x.0].value;
        if axis >= t.rank() {
            return Err(TensorError::BadAxis {
                op: "slice",
                axis,
                rank: t.rank(),
            });
        }
        let axis_len = t.shape()[axis];
        if start + len > axis_len || len == 0 {
            return Err(TensorError::BadSlice {
                axis_len,
                start,
                len,
            });
        }
        let (outer, _, inner) = lanes(t.shape(), axis);
        let mut out_shape = t.shape().to_vec();
        out_shape[axis] = len;
        let mut out = Tensor::zeros(&out_shape);
        {
            let src = t.data();
            let dst = out.data_mut();
            let row_in = axis_len * inner;
            let block = len * inner;
            for o in 0..outer {
                let s = &src[o * row_in + start * inner..o * row_in + start * inner + block];
                dst[o * block..(o + 1) * block].copy_from_slice(s);
            }
        }
        let needs = self.needs(x);
        Ok(self.push(
            out,
            Op::Slice {
                x,
                axis,
                start,
                len,
            },
            needs,
        ))
    }

    // ── Reductions ───────────────────────────────────────────────────────

    pub fn sum_all(&mut self, x: Var) -> Var {
        let t = &self.nodes[x.0].value;
        let out = Tensor::scalar(t.data().iter().sum());
        let needs = self.needs(x);
        self.push(out, Op::SumAll(x), needs)
    }

    pub fn mean_all(&mut self, x: Var) -> Result<Var, TensorError> {
        let t = &self.nodes[x.0].value;
        if t.numel() == 0 {
            return Err(TensorError::Empty { op: "mean_all" });
        }
        let out = Tensor::scalar(t.data().iter().sum::<f64>() / t.numel() as f64);
        let needs = self.needs(x);
        Ok(self.push(out, Op::MeanAll(x), needs))
    }

    /// Sum out one axis (result drops that axis).
    pub fn sum_axis(&mut self, x: Var, axis: usize) -> Result<Var, TensorError> {
        let t = &self.nodes[x.0].value;
        if axis >= t.rank() {
            return Err(TensorError::BadAxis {
                op: "sum_axis",
                axis,
                rank: t.rank(),
            });
        }
        let (outer, len, inner) = lanes(t.shape(), axis);
        let mut out_shape = t.shape().to_vec();
        out_shape.remove(axis);
        let mut out = Tensor::zeros(&out_shape);
        {
            let src = t.data();
            let dst = out.data_mut();
            for o in 0..outer {
                for j in 0..len {
                    let base = (o * len + j) * inner;
                    for i in 0..inner {
                        dst[o * inner + i] += src[base + i];
                    }
                }
            }
        }
        let needs = self.needs(x);
        Ok(self.push(out, Op::SumAxis { x, axis }, needs))
    }

    // ── Backward ─────────────────────────────────────────────────────────

    /// Reverse sweep from a scalar `loss`. Consumes the graph (the record is
    /// cleared); every op's adjoint runs at most once, in exact reverse
    /// execution order. Leaves with `requires_grad` that are reachable from
    /// the loss end up with a gradient of their own shape in [`Gradients`].
    pub fn backward(self, loss: Var) -> Result<Gradients, TensorError> {
        let n = self.nodes.len();
        let loss_node = &self.nodes[loss.0];
        if loss_node.value.numel() != 1 {
            return Err(TensorError::NotScalar {
                op: "backward",
                shape: loss_node.value.shape().to_vec(),
            });
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; n];
        grads[loss.0] = Some(vec![1.0]);
        let mut visited = 0usize;

        for id in (0..n).rev() {
            if matches!(self.nodes[id].op, Op::Leaf) {
                continue;
            }
            // Nodes outside the loss's ancestry (or pure-constant subtrees)
            // never receive a gradient; their adjoint is skipped.
            let Some(g) = grads[id].take() else { continue };
            visited += 1;
            self.apply_adjoint(id, &g, &mut grads);
        }

        let grads = grads
            .into_iter()
            .enumerate()
            .map(|(id, buf)| {
                buf.map(|b| {
                    Tensor::new(self.nodes[id].value.shape().to_vec(), b)
                        .expect("gradient buffer matches node shape")
                })
            })
            .collect();
        Ok(Gradients {
            grads,
            ops_visited: visited,
        })
    }

    fn apply_adjoint(&self, id: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        // Accumulation helper: lazily zero-initialize the target buffer.
        fn buf(grads: &mut [Option<Vec<f64>>], v: Var, numel: usize) -> &mut [f64] {
            grads[v.0]
                .get_or_insert_with(|| vec![0.0; numel])
                .as_mut_slice()
        }
        let val = |v: Var| self.nodes[v.0].value.data();
        let numel = |v: Var| self.nodes[v.0].value.numel();
        let needs = |v: Var| self.nodes[v.0].needs_grad;

        match &self.nodes[id].op {
            Op::Leaf => unreachable!("leaves are skipped in the reverse sweep"),
            Op::Add(a, b) => {
                if needs(*a) {
                    let da = buf(grads, *a, numel(*a));
                    for (d, gi) in da.iter_mut().zip(g) {
                        *d += gi;
                    }
                }
                if needs(*b) {
                    let db = buf(grads, *b, numel(*b));
                    for (d, gi) in db.iter_mut().zip(g) {
                        *d += gi;
                    }
                }
            }
            Op::Sub(a, b) => {
                if needs(*a) {
                    let da = buf(grads, *a, numel(*a));
                    for (d, gi) in da.iter_mut().zip(g) {
                        *d += gi;
                    }
                }
                if needs(*b) {
                    let db = buf(grads, *b, numel(*b));
                    for (d, gi) in db.iter_mut().zip(g) {
                        *d -= gi;
                    }
                }
            }
            Op::Mul(a, b) => {
                if needs(*a) {
                    let bv: Vec<f64> = val(*b).to_vec();
                    let da = buf(grads, *a, numel(*a));
                    for i in 0..da.len() {
                        da[i] += g[i] * bv[i];
                    }
                }
                if needs(*b) {
                    let av: Vec<f64> = val(*a).to_vec();
                    let db = buf(grads, *b, numel(*b));
                    for i in 0..db.len() {
                        db[i] += g[i] * av[i];
                    }
                }
            }
            Op::Div(a, b) => {
                // c = a/b: dc/da = 1/b, dc/db = −c/b.
                let out: Vec<f64> = self.nodes[id].value.data().to_vec();
                if needs(*a) {
                    let bv: Vec<f64> = val(*b).to_vec();
                    let da = buf(grads, *a, numel(*a));
                    for i in 0..da.len() {
                        da[i] += g[i] / bv[i];
                    }
                }
                if needs(*b) {
                    let bv: Vec<f64> = val(*b).to_vec();
                    let db = buf(grads, *b, numel(*b));
                    for i in 0..db.len() {
                        db[i] -= g[i] * out[i] / bv[i];
                    }
                }
            }
            Op::Scale(x, c) => {
                if needs(*x) {
                    let dx = buf(grads, *x, numel(*x));
                    for (d, gi) in dx.iter_mut().zip(g) {
                        *d += c * gi;
                    }
                }
            }
            Op::AddScalar(x) => {
                if needs(*x) {
                    let dx = buf(grads, *x, numel(*x));
                    for (d, gi) in dx.iter_mut().zip(g) {
                        *d += gi;
                    }
                }
            }
            Op::Clamp(x, lo, hi) => {
                if needs(*x) {
                    let (lo, hi) = (*lo, *hi);
                    let xv: Vec<f64> = val(*x).to_vec();
                    let dx = buf(grads, *x, numel(*x));
                    for i in 0..dx.len() {
                        if xv[i] > lo && xv[i] < hi {
                            dx[i] += g[i];
                        }
                    }
                }
            }
            Op::Gelu(x) => {
                if needs(*x) {
                    let xv: Vec<f64> = val(*x).to_vec();
                    let dx = buf(grads, *x, numel(*x));
                    for i in 0..dx.len() {
                        dx[i] += g[i] * gelu_grad(xv[i]);
                    }
                }
            }
            Op::Sigmoid(x) => {
                if needs(*x) {
                    let yv: Vec<f64> = self.nodes[id].value.data().to_vec();
                    let dx = buf(grads, *x, numel(*x));
                    for i in 0..dx.len() {
                        dx[i] += g[i] * yv[i] * (1.0 - yv[i]);
                    }
                }
            }
            Op::Sin(x) => {
                if needs(*x) {
                    let xv: Vec<f64> = val(*x).to_vec();
                    let dx = buf(grads, *x, numel(*x));
                    for i in 0..dx.len() {
                        dx[i] += g[i] * fmath::cos(xv[i]);
                    }
                }
            }
            Op::Cos(x) => {
                if needs(*x) {
                    let xv: Vec<f64> = val(*x).to_vec();
                    let dx = buf(grads, *x, numel(*x));
                    for i in 0..dx.len() {
                        dx[i] -= g[i] * fmath::sin(xv[i]);
                    }
                }
            }
            Op::Log(x) => {
                if needs(*x) {
                    let xv: Vec<f64> = val(*x).to_vec();
                    let dx = buf(grads, *x, numel(*x));
                    for i in 0..dx.len() {
                        dx[i] += g[i] / xv[i];
                    }
                }
            }
            Op::Matmul {
                a,
                b,
                batch,
                m,
                k,
                n,
                a_batched,
                b_batched,
            } => {
                let (m, k, n) = (*m, *k, *n);
                if needs(*a) {
                    // da += g · bᵀ, accumulated across broadcast batches.
                    let bv: Vec<f64> = val(*b).to_vec();
                    let da = buf(grads, *a, numel(*a));
                    for i in 0..*batch {
                        let go = i * m * n;
                        let bo = if *b_batched { i * k * n } else { 0 };
                        let ao = if *a_batched { i * m * k } else { 0 };
                        gemm(
                            m,
                            n,
                            k,
                            &g[go..go + m * n],
                            false,
                            &bv[bo..bo + k * n],
                            true,
                            &mut da[ao..ao + m * k],
                            true,
                        );
                    }
                }
                if needs(*b) {
                    // db += aᵀ · g, accumulated across broadcast batches.
                    let av: Vec<f64> = val(*a).to_vec();
                    let db = buf(grads, *b, numel(*b));
                    for i in 0..*batch {
                        let go = i * m * n;
                        let ao = if *a_batched { i * m * k } else { 0 };
                        let bo = if *b_batched { i * k * n } else { 0 };
                        gemm(
                            k,
                            m,
                            n,
                            &av[ao..ao + m * k],
                            true,
                            &g[go..go + m * n],
                            false,
                            &mut db[bo..bo + k * n],
                            true,
                        );
                    }
                }
            }
            Op::Transpose(x) => {
                if needs(*x) {
                    let shape_out = self.nodes[id].value.shape().to_vec();
                    let gt = Tensor::new(shape_out, g.to_vec()).expect("grad matches output");
                    let back = transpose_last_two(&gt);
                    let dx = buf(grads, *x, numel(*x));
                    for (d, v) in dx.iter_mut().zip(back.data()) {
                        *d += v;
                    }
                }
            }
            Op::BiasAdd(x, b) => {
                let d = self.nodes[b.0].value.numel();
                if needs(*x) {
                    let dx = buf(grads, *x, numel(*x));
                    for (dv, gi) in dx.iter_mut().zip(g) {
                        *dv += gi;
                    }
                }
                if needs(*b) {
                    let db = buf(grads, *b, d);
                    for row in g.chunks(d) {
                        for (dv, gi) in db.iter_mut().zip(row) {
                            *dv += gi;
                        }
                    }
                }
            }
            Op::Softmax { x, axis } => {
                if needs(*x) {
                    let y: Vec<f64> = self.nodes[id].value.data().to_vec();
                    let shape = self.nodes[id].value.shape().to_vec();
                    let (outer, len, inner) = lanes(&shape, *axis);
                    let dx = buf(grads, *x, numel(*x));
                    for o in 0..outer {
                        for i in 0..inner {
                            let at = |j: usize| (o * len + j) * inner + i;
                            let mut dot = 0.0;
                            for j in 0..len {
                                dot += g[at(j)] * y[at(j)];
                            }
                            for j in 0..len {
                                dx[at(j)] += y[at(j)] * (g[at(j)] - dot);
                            }
                        }
                    }
                }
            }
            Op::LayerNorm { x, gain, bias, eps } => {
                let xv: Vec<f64> = val(*x).to_vec();
                let gv: Vec<f64> = val(*gain).to_vec();
                let d = gv.len();
                let rows = xv.len() / d;
                // Per-row statistics are cheap to recompute.
                let mut xhat = vec![0.0; xv.len()];
                let mut inv = vec![0.0; rows];
                for r in 0..rows {
                    let row = &xv[r * d..(r + 1) * d];
                    let mean = row.iter().sum::<f64>() / d as f64;
                    let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
                    inv[r] = 1.0 / fmath::sqrt(var + eps);
                    for j in 0..d {
                        xhat[r * d + j] = (row[j] - mean) * inv[r];
                    }
                }
                if needs(*bias) {
                    let db = buf(grads, *bias, d);
                    for r in 0..rows {
                        for j in 0..d {
                            db[j] += g[r * d + j];
                        }
                    }
                }
                if needs(*gain) {
                    let dg = buf(grads, *gain, d);
                    for r in 0..rows {
                        for j in 0..d {
                            dg[j] += g[r * d + j] * xhat[r * d + j];
                        }
                    }
                }
                if needs(*x) {
                    let dx = buf(grads, *x, xv.len());
                    for r in 0..rows {
                        // dxhat = g ⊙ gain; then the two centering terms.
                        let mut mean_dx = 0.0;
                        let mut mean_dxx = 0.0;
                        for j in 0..d {
                            let dh = g[r * d + j] * gv[j];
                            mean_dx += dh;
                            mean_dxx += dh * xhat[r * d + j];
                        }
                        mean_dx /= d as f64;
                        mean_dxx /= d as f64;
                        for j in 0..d {
                            let dh = g[r * d + j] * gv[j];
                            dx[r * d + j] +=
                                inv[r] * (dh - mean_dx - xhat[r * d + j] * mean_dxx);
                        }
                    }
                }
            }
            Op::Concat { parts, axis } => {
                let out_shape = self.nodes[id].value.shape().to_vec();
                let (outer, _, inner) = lanes(&out_shape, *axis);
                let row_out = out_shape[*axis] * inner;
                let mut col_off = 0;
                for p in parts {
                    let len_p = self.nodes[p.0].value.shape()[*axis];
                    let block = len_p * inner;
                    if needs(*p) {
                        let dp = buf(grads, *p, len_p * inner * outer);
                        for o in 0..outer {
                            let src = &g[o * row_out + col_off..o * row_out + col_off + block];
                            for (d, v) in dp[o * block..(o + 1) * block].iter_mut().zip(src) {
                                *d += v;
                            }
                        }
                    }
                    col_off += block;
                }
            }
            Op::Slice {
                x,
                axis,
                start,
                len,
            } => {
                if needs(*x) {
                    let in_shape = self.nodes[x.0].value.shape().to_vec();
                    let (outer, axis_len, inner) = lanes(&in_shape, *axis);
                    let row_in = axis_len * inner;
                    let block = len * inner;
                    let dx = buf(grads, *x, numel(*x));
                    for o in 0..outer {
                        let dst = &mut dx[o * row_in + start * inner..o * row_in + start * inner + block];
                        for (d, v) in dst.iter_mut().zip(&g[o * block..(o + 1) * block]) {
                            *d += v;
                        }
                    }
                }
            }
            Op::SumAll(x) => {
                if needs(*x) {
                    let dx = buf(grads, *x, numel(*x));
                    for d in dx.iter_mut() {
                        *d += g[0];
                    }
                }
            }
            Op::MeanAll(x) => {
                if needs(*x) {
                    let n = numel(*x);
                    let dx = buf(grads, *x, n);
                    let gi = g[0] / n as f64;
                    for d in dx.iter_mut() {
                        *d += gi;
                    }
                }
            }
            Op::SumAxis { x, axis } => {
                if needs(*x) {
                    let in_shape = self.nodes[x.0].value.shape().to_vec();
                    let (outer, len, inner) = lanes(&in_shape, *axis);
                    let dx = buf(grads, *x, numel(*x));
                    for o in 0..outer {
                        for j in 0..len {
                            let base = (o * len + j) * inner;
                            for i in 0..inner {
                                dx[base + i] += g[o * inner + i];
                            }
                        }
                    }
                }
            }
        }
    }
}

fn transpose_last_two(t: &Tensor) -> Tensor {
    let shape = t.shape();
    let rank = shape.len();
    let (r, c) = (shape[rank - 2], shape[rank - 1]);
    let batch: usize = shape[..rank - 2].iter().product();
    let mut out_shape = shape.to_vec();
    out_shape[rank - 2] = c;
    out_shape[rank - 1] = r;
    let mut out = Tensor::zeros(&out_shape);
    {
        let src = t.data();
        let dst = out.data_mut();
        for bi in 0..batch.max(1) {
            let off = bi * r * c;
            for i in 0..r {
                for j in 0..c {
                    dst[off + j * r + i] = src[off + i * c + j];
                }
            }
        }
    }
    out
}

fn gelu_val(x: f64) -> f64 {
    0.5 * x * (1.0 + fmath::erf(x * core::f64::consts::FRAC_1_SQRT_2))
}

fn gelu_grad(x: f64) -> f64 {
    // d/dx [x·Φ(x)] = Φ(x) + x·φ(x) with Φ the standard normal CDF.
    const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;
    let cdf = 0.5 * (1.0 + fmath::erf(x * core::f64::consts::FRAC_1_SQRT_2));
    cdf + x * INV_SQRT_2PI * fmath::exp(-0.5 * x * x)
}

fn sigmoid_val(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + fmath::exp(-x))
    } else {
        let e = fmath::exp(x);
        e / (1.0 + e)
    }
}
