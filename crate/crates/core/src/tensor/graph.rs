use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use super::kernels::{axpy, gemm_nn, gemm_nt, gemm_tn};
use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, T),
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Abs(Var),
    Square(Var),
    Sum(Var),
    Mean(Var),
    MaskMul(Var, Vec<T>),
    Conv1d {
        x: Var,
        w: Var,
        dilation: usize,
    },
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        rstd: Vec<T>,
    },
    Softmax(Var),
    Gather {
        src: Var,
        rows: Vec<usize>,
    },
    SliceCols {
        x: Var,
        start: usize,
    },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    Reshape(Var),
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        probs: Vec<T>,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
    grad: Option<Vec<T>>,
}

/// Operation record for one forward pass. Nodes are appended in evaluation
/// order, which is therefore a topological order.
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn as_matrix(shape: &[usize]) -> Option<(usize, usize)> {
    match shape {
        [r, c] => Some((*r, *c)),
        _ => None,
    }
}

fn grad_buf<T: Scalar>(adj: &mut [Option<Vec<T>>], v: Var, len: usize) -> &mut Vec<T> {
    adj[v.0].get_or_insert_with(|| vec![T::zero(); len])
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Input tensor; `requires_grad` leaves receive gradients on [`Graph::backward`].
    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of a leaf, if any backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.nodes[v.0].grad.as_deref()
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    fn matrix(&self, v: Var, op: &'static str) -> Result<(usize, usize)> {
        let s = self.shape(v);
        as_matrix(s).ok_or_else(|| Error::Input(format!("{op} expects a rank-2 tensor, got {s:?}")))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::shape(op, sa, sb));
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.matrix(a, "matmul")?;
        let (k2, n) = self.matrix(b, "matmul")?;
        if k != k2 {
            return Err(Error::shape("matmul", self.shape(a), self.shape(b)));
        }
        let mut out = vec![T::zero(); m * n];
        gemm_nn(m, k, n, self.value(a).data(), self.value(b).data(), &mut out);
        Ok(self.push(Tensor { shape: vec![m, n], data: out }, Op::MatMul(a, b), &[a, b]))
    }

    /// `a · bᵀ` for `a: [m,k]`, `b: [n,k]`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.matrix(a, "matmul_nt")?;
        let (n, k2) = self.matrix(b, "matmul_nt")?;
        if k != k2 {
            return Err(Error::shape("matmul_nt", self.shape(a), self.shape(b)));
        }
        let mut out = vec![T::zero(); m * n];
        gemm_nt(m, k, n, self.value(a).data(), self.value(b).data(), &mut out);
        Ok(self.push(Tensor { shape: vec![m, n], data: out }, Op::MatMulNt(a, b), &[a, b]))
    }

    fn zip_with(&mut self, op: &'static str, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        self.same_shape(op, a, b)?;
        let (va, vb) = (self.value(a), self.value(b));
        Ok(Tensor {
            shape: va.shape.clone(),
            data: va.data.iter().zip(&vb.data).map(|(&x, &y)| f(x, y)).collect(),
        })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_with("add", a, b, |x, y| x + y)?;
        Ok(self.push(t, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_with("sub", a, b, |x, y| x - y)?;
        Ok(self.push(t, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_with("mul", a, b, |x, y| x * y)?;
        Ok(self.push(t, Op::Mul(a, b), &[a, b]))
    }

    /// Adds a bias vector to every row of `x`.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let c = self.value(x).cols();
        if self.value(bias).numel() != c {
            return Err(Error::shape("add_row", self.shape(x), self.shape(bias)));
        }
        let b = self.value(bias).data();
        let vx = self.value(x);
        let mut data = vx.data.clone();
        for row in data.chunks_exact_mut(c) {
            for (v, &bv) in row.iter_mut().zip(b) {
                *v += bv;
            }
        }
        let t = Tensor { shape: vx.shape.clone(), data };
        Ok(self.push(t, Op::AddRow(x, bias), &[x, bias]))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let s = T::of(s);
        let t = self.value(x).map(|v| v * s);
        self.push(t, Op::Scale(x, s), &[x])
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let t = self.value(x).map(|v| if v > T::zero() { v } else { T::zero() });
        self.push(t, Op::Relu(x), &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let t = self.value(x).map(|v| T::one() / (T::one() + (-v).exp()));
        self.push(t, Op::Sigmoid(x), &[x])
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let t = self.value(x).map(|v| v.tanh());
        self.push(t, Op::Tanh(x), &[x])
    }

    pub fn abs(&mut self, x: Var) -> Var {
        let t = self.value(x).map(|v| v.abs());
        self.push(t, Op::Abs(x), &[x])
    }

    pub fn square(&mut self, x: Var) -> Var {
        let t = self.value(x).map(|v| v * v);
        self.push(t, Op::Square(x), &[x])
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let t = Tensor::scalar(self.value(x).sum());
        self.push(t, Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let t = Tensor::scalar(v.sum() / T::of(v.numel() as f64));
        self.push(t, Op::Mean(x), &[x])
    }

    /// Elementwise product with a constant mask (dropout, loss masking).
    pub fn mask_mul(&mut self, x: Var, mask: Vec<T>) -> Result<Var> {
        let vx = self.value(x);
        if mask.len() != vx.numel() {
            return Err(Error::shape("mask_mul", vx.shape(), &[mask.len()]));
        }
        let t = Tensor {
            shape: vx.shape.clone(),
            data: vx.data.iter().zip(&mask).map(|(&a, &m)| a * m).collect(),
        };
        Ok(self.push(t, Op::MaskMul(x, mask), &[x]))
    }

    /// Inverted dropout: in training mode each element is zeroed with
    /// probability `rate` and survivors are scaled by `1/(1-rate)`.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, rate: f64, training: bool, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Config(format!("dropout rate must be in [0,1), got {rate}")));
        }
        if !training || rate == 0.0 {
            return Ok(x);
        }
        let keep = T::of(1.0 / (1.0 - rate));
        let n = self.value(x).numel();
        let mask = (0..n)
            .map(|_| if rng.random::<f64>() < rate { T::zero() } else { keep })
            .collect();
        self.mask_mul(x, mask)
    }

    /// Dilated "same" cross-correlation over time. `x: [T, C_in]`,
    /// `w: [k, C_in, C_out]` with odd `k`; output `[T, C_out]`.
    pub fn conv1d(&mut self, x: Var, w: Var, dilation: usize) -> Result<Var> {
        let (t_len, c_in) = self.matrix(x, "conv1d")?;
        let ws = self.shape(w);
        let &[k, wc_in, c_out] = ws else {
            return Err(Error::Input(format!("conv1d kernel must be [k, C_in, C_out], got {ws:?}")));
        };
        if wc_in != c_in {
            return Err(Error::shape("conv1d", self.shape(x), ws));
        }
        if k % 2 == 0 {
            return Err(Error::Config(format!("conv1d kernel size must be odd, got {k}")));
        }
        if dilation == 0 {
            return Err(Error::Config("conv1d dilation must be at least 1".into()));
        }
        let mut out = vec![T::zero(); t_len * c_out];
        let (xd, wd) = (self.value(x).data(), self.value(w).data());
        for_each_tap(t_len, k, dilation, |j, t0, t1, s0| {
            let rows = t1 - t0;
            gemm_nn(
                rows,
                c_in,
                c_out,
                &xd[s0 * c_in..(s0 + rows) * c_in],
                &wd[j * c_in * c_out..(j + 1) * c_in * c_out],
                &mut out[t0 * c_out..t1 * c_out],
            );
        });
        let t = Tensor { shape: vec![t_len, c_out], data: out };
        Ok(self.push(t, Op::Conv1d { x, w, dilation }, &[x, w]))
    }

    /// Normalizes each last-axis slice to zero mean and unit variance, then
    /// applies the affine `gamma`, `beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        if eps <= 0.0 {
            return Err(Error::Config(format!("layer_norm eps must be positive, got {eps}")));
        }
        let vx = self.value(x);
        let d = vx.cols();
        if self.value(gamma).numel() != d || self.value(beta).numel() != d {
            return Err(Error::shape("layer_norm", vx.shape(), self.shape(gamma)));
        }
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        let n = T::of(d as f64);
        let eps = T::of(eps);
        let mut xhat = Vec::with_capacity(vx.numel());
        let mut rstd = Vec::with_capacity(vx.rows());
        let mut out = Vec::with_capacity(vx.numel());
        for row in vx.data.chunks_exact(d) {
            let mean = row.iter().copied().sum::<T>() / n;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
            let r = T::one() / (var + eps).sqrt();
            rstd.push(r);
            for (j, &v) in row.iter().enumerate() {
                let h = (v - mean) * r;
                xhat.push(h);
                out.push(h * g[j] + b[j]);
            }
        }
        let t = Tensor { shape: vx.shape.clone(), data: out };
        Ok(self.push(t, Op::LayerNorm { x, gamma, beta, xhat, rstd }, &[x, gamma, beta]))
    }

    /// Softmax over the last axis, max-subtracted.
    pub fn softmax(&mut self, x: Var) -> Var {
        let vx = self.value(x);
        let d = vx.cols();
        let mut out = Vec::with_capacity(vx.numel());
        for row in vx.data.chunks_exact(d) {
            softmax_row(row, &mut out);
        }
        let t = Tensor { shape: vx.shape.clone(), data: out };
        self.push(t, Op::Softmax(x), &[x])
    }

    /// Row gather from a rank-2 source; rows may repeat (embedding lookup,
    /// length regulation, tiling).
    pub fn gather_rows(&mut self, src: Var, rows: &[usize]) -> Result<Var> {
        let (n, d) = self.matrix(src, "gather_rows")?;
        if rows.is_empty() {
            return Err(Error::Empty("gather_rows indices"));
        }
        let s = self.value(src).data();
        let mut out = Vec::with_capacity(rows.len() * d);
        for &r in rows {
            if r >= n {
                return Err(Error::OutOfRange { what: "gather row", index: r, capacity: n });
            }
            out.extend_from_slice(&s[r * d..(r + 1) * d]);
        }
        let t = Tensor { shape: vec![rows.len(), d], data: out };
        Ok(self.push(t, Op::Gather { src, rows: rows.to_vec() }, &[src]))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = self.matrix(x, "slice_cols")?;
        if len == 0 || start + len > c {
            return Err(Error::OutOfRange { what: "column slice end", index: start + len, capacity: c });
        }
        let xd = self.value(x).data();
        let mut out = Vec::with_capacity(r * len);
        for i in 0..r {
            out.extend_from_slice(&xd[i * c + start..i * c + start + len]);
        }
        let t = Tensor { shape: vec![r, len], data: out };
        Ok(self.push(t, Op::SliceCols { x, start }, &[x]))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or(Error::Empty("concat_cols parts"))?;
        let (r, _) = self.matrix(first, "concat_cols")?;
        let mut total = 0;
        for &p in parts {
            let (pr, pc) = self.matrix(p, "concat_cols")?;
            if pr != r {
                return Err(Error::shape("concat_cols", self.shape(first), self.shape(p)));
            }
            total += pc;
        }
        let mut out = Vec::with_capacity(r * total);
        for i in 0..r {
            for &p in parts {
                out.extend_from_slice(self.value(p).row(i));
            }
        }
        let t = Tensor { shape: vec![r, total], data: out };
        Ok(self.push(t, Op::ConcatCols(parts.to_vec()), parts))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or(Error::Empty("concat_rows parts"))?;
        let (_, c) = self.matrix(first, "concat_rows")?;
        let mut rows = 0;
        for &p in parts {
            let (pr, pc) = self.matrix(p, "concat_rows")?;
            if pc != c {
                return Err(Error::shape("concat_rows", self.shape(first), self.shape(p)));
            }
            rows += pr;
        }
        let mut out = Vec::with_capacity(rows * c);
        for &p in parts {
            out.extend_from_slice(self.value(p).data());
        }
        let t = Tensor { shape: vec![rows, c], data: out };
        Ok(self.push(t, Op::ConcatRows(parts.to_vec()), parts))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x).clone().reshape(shape)?;
        Ok(self.push(t, Op::Reshape(x), &[x]))
    }

    /// Mean negative log-likelihood of `targets` under row-wise softmax of
    /// `logits: [N, C]`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let (n, c) = self.matrix(logits, "cross_entropy")?;
        if targets.len() != n {
            return Err(Error::shape("cross_entropy", self.shape(logits), &[targets.len()]));
        }
        let mut probs = Vec::with_capacity(n * c);
        let mut nll = 0.0f64;
        for (row, &tgt) in self.value(logits).data.chunks_exact(c).zip(targets) {
            if tgt >= c {
                return Err(Error::OutOfRange { what: "class", index: tgt, capacity: c });
            }
            let start = probs.len();
            softmax_row(row, &mut probs);
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = max.f64() + libm::log(row.iter().map(|&v| libm::exp((v - max).f64())).sum::<f64>());
            nll += lse - row[tgt].f64();
            debug_assert!(probs.len() == start + c);
        }
        let t = Tensor::scalar(T::of(nll / n as f64));
        Ok(self.push(t, Op::CrossEntropy { logits, targets: targets.to_vec(), probs }, &[logits]))
    }

    /// Reverse pass from a scalar `loss`. Gradients are added to the
    /// accumulators of every `requires_grad` leaf reachable from `loss`;
    /// calling twice without [`Graph::zero_grad`] accumulates.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let ls = self.shape(loss);
        if self.value(loss).numel() != 1 {
            return Err(Error::Input(format!("backward needs a scalar loss, got shape {ls:?}")));
        }
        if !self.requires_grad(loss) {
            return Ok(());
        }
        let mut adj: Vec<Option<Vec<T>>> = (0..=loss.0).map(|_| None).collect();
        adj[loss.0] = Some(vec![T::one()]);
        let mut leaf_grads = Vec::new();
        for i in (0..=loss.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            if let Op::Leaf = node.op {
                leaf_grads.push((i, g));
                continue;
            }
            self.propagate(i, &g, &mut adj);
        }
        for (i, g) in leaf_grads {
            match &mut self.nodes[i].grad {
                Some(acc) => {
                    for (a, v) in acc.iter_mut().zip(&g) {
                        *a += *v;
                    }
                }
                slot @ None => *slot = Some(g),
            }
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &[T], adj: &mut [Option<Vec<T>>]) {
        let nodes = &self.nodes;
        let node = &nodes[i];
        let needs = |v: Var| nodes[v.0].requires_grad;
        let val = |v: Var| &nodes[v.0].value;
        let numel = |v: Var| nodes[v.0].value.numel();
        match &node.op {
            Op::Leaf => {}
            &Op::MatMul(a, b) => {
                let (m, k) = as_matrix(val(a).shape()).unwrap();
                let n = val(b).shape()[1];
                if needs(a) {
                    gemm_nt(m, n, k, g, val(b).data(), grad_buf(adj, a, m * k));
                }
                if needs(b) {
                    gemm_tn(k, m, n, val(a).data(), g, grad_buf(adj, b, k * n));
                }
            }
            &Op::MatMulNt(a, b) => {
                let (m, k) = as_matrix(val(a).shape()).unwrap();
                let n = val(b).shape()[0];
                if needs(a) {
                    gemm_nn(m, n, k, g, val(b).data(), grad_buf(adj, a, m * k));
                }
                if needs(b) {
                    gemm_tn(n, m, k, g, val(a).data(), grad_buf(adj, b, n * k));
                }
            }
            &Op::Add(a, b) => {
                for v in [a, b] {
                    if needs(v) {
                        axpy(grad_buf(adj, v, g.len()), T::one(), g);
                    }
                }
            }
            &Op::Sub(a, b) => {
                if needs(a) {
                    axpy(grad_buf(adj, a, g.len()), T::one(), g);
                }
                if needs(b) {
                    axpy(grad_buf(adj, b, g.len()), -T::one(), g);
                }
            }
            &Op::Mul(a, b) => {
                if needs(a) {
                    let buf = grad_buf(adj, a, g.len());
                    for ((d, &gv), &bv) in buf.iter_mut().zip(g).zip(val(b).data()) {
                        *d += gv * bv;
                    }
                }
                if needs(b) {
                    let buf = grad_buf(adj, b, g.len());
                    for ((d, &gv), &av) in buf.iter_mut().zip(g).zip(val(a).data()) {
                        *d += gv * av;
                    }
                }
            }
            &Op::AddRow(x, bias) => {
                if needs(x) {
                    axpy(grad_buf(adj, x, g.len()), T::one(), g);
                }
                if needs(bias) {
                    let c = numel(bias);
                    let buf = grad_buf(adj, bias, c);
                    for row in g.chunks_exact(c) {
                        axpy(buf, T::one(), row);
                    }
                }
            }
            &Op::Scale(x, s) => {
                if needs(x) {
                    axpy(grad_buf(adj, x, g.len()), s, g);
                }
            }
            &Op::Relu(x) => {
                if needs(x) {
                    let buf = grad_buf(adj, x, g.len());
                    for ((d, &gv), &y) in buf.iter_mut().zip(g).zip(node.value.data()) {
                        if y > T::zero() {
                            *d += gv;
                        }
                    }
                }
            }
            &Op::Sigmoid(x) => {
                if needs(x) {
                    let buf = grad_buf(adj, x, g.len());
                    for ((d, &gv), &y) in buf.iter_mut().zip(g).zip(node.value.data()) {
                        *d += gv * y * (T::one() - y);
                    }
                }
            }
            &Op::Tanh(x) => {
                if needs(x) {
                    let buf = grad_buf(adj, x, g.len());
                    for ((d, &gv), &y) in buf.iter_mut().zip(g).zip(node.value.data()) {
                        *d += gv * (T::one() - y * y);
                    }
                }
            }
            &Op::Abs(x) => {
                if needs(x) {
                    let buf = grad_buf(adj, x, g.len());
                    for ((d, &gv), &xv) in buf.iter_mut().zip(g).zip(val(x).data()) {
                        if xv > T::zero() {
                            *d += gv;
                        } else if xv < T::zero() {
                            *d -= gv;
                        }
                    }
                }
            }
            &Op::Square(x) => {
                if needs(x) {
                    let two = T::of(2.0);
                    let buf = grad_buf(adj, x, g.len());
                    for ((d, &gv), &xv) in buf.iter_mut().zip(g).zip(val(x).data()) {
                        *d += two * xv * gv;
                    }
                }
            }
            &Op::Sum(x) => {
                if needs(x) {
                    let n = numel(x);
                    for d in grad_buf(adj, x, n).iter_mut() {
                        *d += g[0];
                    }
                }
            }
            &Op::Mean(x) => {
                if needs(x) {
                    let n = numel(x);
                    let s = g[0] / T::of(n as f64);
                    for d in grad_buf(adj, x, n).iter_mut() {
                        *d += s;
                    }
                }
            }
            Op::MaskMul(x, mask) => {
                if needs(*x) {
                    let buf = grad_buf(adj, *x, g.len());
                    for ((d, &gv), &m) in buf.iter_mut().zip(g).zip(mask) {
                        *d += gv * m;
                    }
                }
            }
            &Op::Conv1d { x, w, dilation } => {
                let (t_len, c_in) = as_matrix(val(x).shape()).unwrap();
                let ws = val(w).shape();
                let (k, c_out) = (ws[0], ws[2]);
                if needs(x) {
                    let wd = val(w).data();
                    let dx = grad_buf(adj, x, t_len * c_in);
                    for_each_tap(t_len, k, dilation, |j, t0, t1, s0| {
                        let rows = t1 - t0;
                        gemm_nt(
                            rows,
                            c_out,
                            c_in,
                            &g[t0 * c_out..t1 * c_out],
                            &wd[j * c_in * c_out..(j + 1) * c_in * c_out],
                            &mut dx[s0 * c_in..(s0 + rows) * c_in],
                        );
                    });
                }
                if needs(w) {
                    let xd = val(x).data();
                    let dw = grad_buf(adj, w, k * c_in * c_out);
                    for_each_tap(t_len, k, dilation, |j, t0, t1, s0| {
                        let rows = t1 - t0;
                        gemm_tn(
                            c_in,
                            rows,
                            c_out,
                            &xd[s0 * c_in..(s0 + rows) * c_in],
                            &g[t0 * c_out..t1 * c_out],
                            &mut dw[j * c_in * c_out..(j + 1) * c_in * c_out],
                        );
                    });
                }
            }
            Op::LayerNorm { x, gamma, beta, xhat, rstd } => {
                let d = numel(*gamma);
                if needs(*gamma) {
                    let buf = grad_buf(adj, *gamma, d);
                    for (grow, hrow) in g.chunks_exact(d).zip(xhat.chunks_exact(d)) {
                        for j in 0..d {
                            buf[j] += grow[j] * hrow[j];
                        }
                    }
                }
                if needs(*beta) {
                    let buf = grad_buf(adj, *beta, d);
                    for grow in g.chunks_exact(d) {
                        axpy(buf, T::one(), grow);
                    }
                }
                if needs(*x) {
                    let gm = val(*gamma).data();
                    let n = T::of(d as f64);
                    let buf = grad_buf(adj, *x, g.len());
                    let rows = g.chunks_exact(d).zip(xhat.chunks_exact(d)).zip(buf.chunks_exact_mut(d));
                    for (((grow, hrow), drow), &r) in rows.zip(rstd) {
                        let mut s1 = T::zero();
                        let mut s2 = T::zero();
                        for j in 0..d {
                            let dh = grow[j] * gm[j];
                            s1 += dh;
                            s2 += dh * hrow[j];
                        }
                        let (m1, m2) = (s1 / n, s2 / n);
                        for j in 0..d {
                            let dh = grow[j] * gm[j];
                            drow[j] += r * (dh - m1 - hrow[j] * m2);
                        }
                    }
                }
            }
            &Op::Softmax(x) => {
                if needs(x) {
                    let d = node.value.cols();
                    let buf = grad_buf(adj, x, g.len());
                    let rows = g.chunks_exact(d).zip(node.value.data().chunks_exact(d));
                    for ((grow, yrow), drow) in rows.zip(buf.chunks_exact_mut(d)) {
                        let s: T = grow.iter().zip(yrow).map(|(&a, &b)| a * b).sum();
                        for j in 0..d {
                            drow[j] += yrow[j] * (grow[j] - s);
                        }
                    }
                }
            }
            Op::Gather { src, rows } => {
                if needs(*src) {
                    let d = val(*src).cols();
                    let buf = grad_buf(adj, *src, numel(*src));
                    for (r, grow) in rows.iter().zip(g.chunks_exact(d)) {
                        axpy(&mut buf[r * d..(r + 1) * d], T::one(), grow);
                    }
                }
            }
            &Op::SliceCols { x, start } => {
                if needs(x) {
                    let c = val(x).cols();
                    let len = node.value.cols();
                    let buf = grad_buf(adj, x, numel(x));
                    for (i, grow) in g.chunks_exact(len).enumerate() {
                        axpy(&mut buf[i * c + start..i * c + start + len], T::one(), grow);
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let total = node.value.cols();
                let mut off = 0;
                for &p in parts {
                    let pc = val(p).cols();
                    if needs(p) {
                        let buf = grad_buf(adj, p, numel(p));
                        for (i, drow) in buf.chunks_exact_mut(pc).enumerate() {
                            axpy(drow, T::one(), &g[i * total + off..i * total + off + pc]);
                        }
                    }
                    off += pc;
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let n = numel(p);
                    if needs(p) {
                        axpy(grad_buf(adj, p, n), T::one(), &g[off..off + n]);
                    }
                    off += n;
                }
            }
            &Op::Reshape(x) => {
                if needs(x) {
                    axpy(grad_buf(adj, x, g.len()), T::one(), g);
                }
            }
            Op::CrossEntropy { logits, targets, probs } => {
                if needs(*logits) {
                    let c = val(*logits).cols();
                    let s = g[0] / T::of(targets.len() as f64);
                    let buf = grad_buf(adj, *logits, probs.len());
                    for (i, &t) in targets.iter().enumerate() {
                        let row = &mut buf[i * c..(i + 1) * c];
                        axpy(row, s, &probs[i * c..(i + 1) * c]);
                        row[t] -= s;
                    }
                }
            }
        }
    }
}

/// Calls `f(tap, out_start, out_end, in_start)` for every kernel tap with a
/// non-empty valid range under symmetric zero padding.
fn for_each_tap(t_len: usize, k: usize, dilation: usize, mut f: impl FnMut(usize, usize, usize, usize)) {
    let half = (k / 2) as isize;
    for j in 0..k {
        let off = (j as isize - half) * dilation as isize;
        let t0 = (-off).max(0) as usize;
        let t1 = (t_len as isize - off).min(t_len as isize);
        if t1 <= t0 as isize {
            continue;
        }
        let t1 = t1 as usize;
        f(j, t0, t1, (t0 as isize + off) as usize);
    }
}

pub(crate) fn softmax_row<T: Scalar>(row: &[T], out: &mut Vec<T>) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let start = out.len();
    let mut total = T::zero();
    for &v in row {
        let e = (v - max).exp();
        total += e;
        out.push(e);
    }
    for v in &mut out[start..] {
        *v /= total;
    }
}
