//! Tape-based reverse-mode differentiation over dense matrices.
//!
//! A [`Graph`] borrows the [`ParameterStore`] read-only while recording a
//! forward pass; [`Graph::backward`] returns a [`Gradients`] set that the
//! caller folds into the store. Inputs created with [`Graph::input`] or
//! [`Graph::detach`] never receive gradient.

use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;

use crate::params::{Gradients, ParamId, ParameterStore};
use crate::tensor::{gemm, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// Visibility rules for [`Graph::attention`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AttnMask {
    /// Number of memory key/value rows placed before the sequence rows.
    pub memory: usize,
    /// Per memory row: whether it may be attended. Rows whose hidden vector is
    /// exactly zero are masked out by callers.
    pub memory_visible: Vec<bool>,
    /// Segment id per sequence row; attention never crosses segments.
    pub segments: Option<Vec<usize>>,
}

impl AttnMask {
    pub fn causal() -> Self {
        Self::default()
    }

    #[inline]
    pub fn visible(&self, query: usize, key: usize) -> bool {
        if key < self.memory {
            return self.memory_visible.get(key).copied().unwrap_or(true);
        }
        let s = key - self.memory;
        if s > query {
            return false;
        }
        match &self.segments {
            Some(seg) => seg[s] == seg[query],
            None => true,
        }
    }
}

enum Op {
    Input,
    Param(ParamId),
    MatMul(Var, Var),
    MatMulNT(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Tanh(Var),
    Sigmoid(Var),
    Exp(Var),
    Gelu(Var),
    Abs(Var),
    Square(Var),
    Sum(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize),
    SliceRows(Var, usize),
    GatherRows(Var, Vec<usize>),
    Reshape(Var),
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Tensor, inv_std: Vec<f64> },
    Attention { q: Var, k: Var, v: Var, heads: usize, probs: Vec<Tensor> },
    CrossEntropy { logits: Var, targets: Vec<Option<usize>>, probs: Tensor, count: usize },
}

enum Value {
    Owned(Tensor),
    Param(ParamId),
}

struct Node {
    value: Value,
    op: Op,
    requires_grad: bool,
}

pub struct Graph<'s> {
    store: &'s ParameterStore,
    nodes: Vec<Node>,
}

pub(crate) const LN_EPS: f64 = 1e-5;
pub(crate) const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

impl<'s> Graph<'s> {
    pub fn new(store: &'s ParameterStore) -> Self {
        Self { store, nodes: Vec::with_capacity(256) }
    }

    pub fn store(&self) -> &'s ParameterStore {
        self.store
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        match &self.nodes[v.0].value {
            Value::Owned(t) => t,
            Value::Param(id) => self.store.value(*id),
        }
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        let t = self.value(v);
        (t.rows(), t.cols())
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node { value: Value::Owned(value), op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// A constant leaf.
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Input, false)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        self.nodes.push(Node { value: Value::Param(id), op: Op::Param(id), requires_grad: true });
        Var(self.nodes.len() - 1)
    }

    /// Copies the value into a new leaf that blocks gradient propagation.
    pub fn detach(&mut self, v: Var) -> Var {
        let t = self.value(v).clone();
        self.input(t)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).matmul(self.value(b));
        let rg = self.rg(&[a, b]);
        self.push(out, Op::MatMul(a, b), rg)
    }

    /// `a · bᵀ`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Var {
        let (ta, tb) = (self.value(a), self.value(b));
        let mut out = Tensor::zeros(ta.rows(), tb.rows());
        gemm(false, true, 1.0, ta, tb, 0.0, &mut out);
        let rg = self.rg(&[a, b]);
        self.push(out, Op::MatMulNT(a, b), rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "add shape");
        let out = self.value(a).zip_map(self.value(b), |x, y| x + y);
        let rg = self.rg(&[a, b]);
        self.push(out, Op::Add(a, b), rg)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "sub shape");
        let out = self.value(a).zip_map(self.value(b), |x, y| x - y);
        let rg = self.rg(&[a, b]);
        self.push(out, Op::Sub(a, b), rg)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "mul shape");
        let out = self.value(a).zip_map(self.value(b), |x, y| x * y);
        let rg = self.rg(&[a, b]);
        self.push(out, Op::Mul(a, b), rg)
    }

    /// Adds a `1 x n` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let (ta, tr) = (self.value(a), self.value(row));
        assert_eq!(tr.rows(), 1, "add_row expects a row vector");
        assert_eq!(ta.cols(), tr.cols(), "add_row width");
        let mut out = ta.clone();
        for r in 0..out.rows() {
            for (o, b) in out.row_slice_mut(r).iter_mut().zip(tr.data()) {
                *o += b;
            }
        }
        let rg = self.rg(&[a, row]);
        self.push(out, Op::AddRow(a, row), rg)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let out = self.value(a).map(|x| x * s);
        let rg = self.rg(&[a]);
        self.push(out, Op::Scale(a, s), rg)
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        let out = self.value(a).map(|x| x + s);
        let rg = self.rg(&[a]);
        self.push(out, Op::AddScalar(a), rg)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).map(Float::tanh);
        let rg = self.rg(&[a]);
        self.push(out, Op::Tanh(a), rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(sigmoid);
        let rg = self.rg(&[a]);
        self.push(out, Op::Sigmoid(a), rg)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let out = self.value(a).map(Float::exp);
        let rg = self.rg(&[a]);
        self.push(out, Op::Exp(a), rg)
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(gelu);
        let rg = self.rg(&[a]);
        self.push(out, Op::Gelu(a), rg)
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let out = self.value(a).map(Float::abs);
        let rg = self.rg(&[a]);
        self.push(out, Op::Abs(a), rg)
    }

    pub fn square(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x * x);
        let rg = self.rg(&[a]);
        self.push(out, Op::Square(a), rg)
    }

    /// Sum of all entries as a `1 x 1` tensor.
    pub fn sum(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).sum());
        let rg = self.rg(&[a]);
        self.push(out, Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len().max(1) as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).rows();
        let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut out = Tensor::zeros(rows, cols);
        let mut off = 0;
        for &p in parts {
            let t = self.value(p);
            assert_eq!(t.rows(), rows, "concat_cols row count");
            for r in 0..rows {
                out.row_slice_mut(r)[off..off + t.cols()].copy_from_slice(t.row_slice(r));
            }
            off += t.cols();
        }
        let rg = self.rg(parts);
        self.push(out, Op::ConcatCols(parts.to_vec()), rg)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let cols = self.value(parts[0]).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let t = self.value(p);
            assert_eq!(t.cols(), cols, "concat_rows width");
            data.extend_from_slice(t.data());
            rows += t.rows();
        }
        let out = Tensor::from_vec(rows, cols, data).expect("concat_rows shape");
        let rg = self.rg(parts);
        self.push(out, Op::ConcatRows(parts.to_vec()), rg)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let t = self.value(a);
        assert!(start + len <= t.cols(), "slice_cols range");
        let mut out = Tensor::zeros(t.rows(), len);
        for r in 0..t.rows() {
            out.row_slice_mut(r).copy_from_slice(&t.row_slice(r)[start..start + len]);
        }
        let rg = self.rg(&[a]);
        self.push(out, Op::SliceCols(a, start), rg)
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Var {
        let t = self.value(a);
        assert!(start + len <= t.rows(), "slice_rows range");
        let c = t.cols();
        let out = Tensor::from_vec(len, c, t.data()[start * c..(start + len) * c].to_vec()).expect("slice_rows");
        let rg = self.rg(&[a]);
        self.push(out, Op::SliceRows(a, start), rg)
    }

    /// `out[i] = a[idx[i]]`; also serves as embedding lookup.
    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Var {
        let t = self.value(a);
        let mut out = Tensor::zeros(idx.len(), t.cols());
        for (i, &j) in idx.iter().enumerate() {
            out.row_slice_mut(i).copy_from_slice(t.row_slice(j));
        }
        let rg = self.rg(&[a]);
        self.push(out, Op::GatherRows(a, idx.to_vec()), rg)
    }

    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Var {
        let out = self.value(a).clone().reshape(rows, cols).expect("reshape size");
        let rg = self.rg(&[a]);
        self.push(out, Op::Reshape(a), rg)
    }

    /// Row-wise layer normalization with `1 x n` gain and bias.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let tx = self.value(x);
        let (rows, cols) = (tx.rows(), tx.cols());
        let (tg, tb) = (self.value(gamma), self.value(beta));
        let mut xhat = Tensor::zeros(rows, cols);
        let mut out = Tensor::zeros(rows, cols);
        let mut inv_std = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = tx.row_slice(r);
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
            let is = 1.0 / (var + LN_EPS).sqrt();
            inv_std.push(is);
            let xr = xhat.row_slice_mut(r);
            for c in 0..cols {
                xr[c] = (row[c] - mean) * is;
            }
            let or = out.row_slice_mut(r);
            for c in 0..cols {
                or[c] = xr[c] * tg.data()[c] + tb.data()[c];
            }
        }
        let rg = self.rg(&[x, gamma, beta]);
        self.push(out, Op::LayerNorm { x, gamma, beta, xhat, inv_std }, rg)
    }

    /// Multi-head scaled dot-product attention. `q` is `T x H`; `k` and `v`
    /// are `(M + T) x H` with the `M` memory rows first.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, heads: usize, mask: &AttnMask) -> Var {
        let (tq, tk, tv) = (self.value(q), self.value(k), self.value(v));
        let (t, h) = (tq.rows(), tq.cols());
        let n = tk.rows();
        assert_eq!(tk.cols(), h, "attention key width");
        assert_eq!(tv.rows(), n, "attention value rows");
        assert_eq!(n, t + mask.memory, "attention key count");
        assert_eq!(h % heads, 0, "heads must divide width");
        let d = h / heads;
        let scale = 1.0 / (d as f64).sqrt();
        let mut out = Tensor::zeros(t, h);
        let mut probs = Vec::with_capacity(heads);
        for head in 0..heads {
            let qh = cols_of(tq, head * d, d);
            let kh = cols_of(tk, head * d, d);
            let vh = cols_of(tv, head * d, d);
            let mut s = Tensor::zeros(t, n);
            gemm(false, true, scale, &qh, &kh, 0.0, &mut s);
            masked_softmax_rows(&mut s, mask);
            let oh = s.matmul(&vh);
            for r in 0..t {
                out.row_slice_mut(r)[head * d..(head + 1) * d].copy_from_slice(oh.row_slice(r));
            }
            probs.push(s);
        }
        let rg = self.rg(&[q, k, v]);
        self.push(out, Op::Attention { q, k, v, heads, probs }, rg)
    }

    /// Mean softmax cross-entropy over rows that carry a target. Entries of
    /// `allowed` set to `false` are excluded from the softmax.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[Option<usize>], allowed: Option<&[bool]>) -> Var {
        let tl = self.value(logits);
        let (rows, cols) = (tl.rows(), tl.cols());
        assert_eq!(targets.len(), rows, "one target slot per row");
        let mut probs = Tensor::zeros(rows, cols);
        let mut total = 0.0;
        let mut count = 0;
        for r in 0..rows {
            let row = tl.row_slice(r);
            let ok = |c: usize| allowed.map_or(true, |a| a[r * cols + c]);
            let max = (0..cols).filter(|&c| ok(c)).map(|c| row[c]).fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            let pr = probs.row_slice_mut(r);
            for c in 0..cols {
                if ok(c) {
                    pr[c] = (row[c] - max).exp();
                    z += pr[c];
                }
            }
            for p in pr.iter_mut() {
                *p /= z;
            }
            if let Some(tgt) = targets[r] {
                assert!(ok(tgt), "target excluded from softmax");
                total += -(row[tgt] - max - z.ln());
                count += 1;
            }
        }
        let loss = if count > 0 { total / count as f64 } else { 0.0 };
        let rg = self.rg(&[logits]);
        self.push(Tensor::scalar(loss), Op::CrossEntropy { logits, targets: targets.to_vec(), probs, count }, rg)
    }

    /// Reverse pass from a `1 x 1` node.
    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(self.shape(loss), (1, 1), "backward from a scalar");
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        let mut out = Gradients::new(self.store.len());
        grads[loss.0] = Some(Tensor::scalar(1.0));
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            self.backprop_node(node, &g, &mut grads, &mut out);
        }
        out
    }

    fn backprop_node(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>], out: &mut Gradients) {
        let mut acc = |v: Var, t: Tensor| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(e) => e.add_assign(&t),
                slot @ None => *slot = Some(t),
            }
        };
        match &node.op {
            Op::Input => {}
            Op::Param(id) => out.add(*id, g),
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                if self.nodes[a.0].requires_grad {
                    let mut ga = Tensor::zeros(ta.rows(), ta.cols());
                    gemm(false, true, 1.0, g, tb, 0.0, &mut ga);
                    acc(*a, ga);
                }
                if self.nodes[b.0].requires_grad {
                    let mut gb = Tensor::zeros(tb.rows(), tb.cols());
                    gemm(true, false, 1.0, ta, g, 0.0, &mut gb);
                    acc(*b, gb);
                }
            }
            Op::MatMulNT(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                if self.nodes[a.0].requires_grad {
                    acc(*a, g.matmul(tb));
                }
                if self.nodes[b.0].requires_grad {
                    let mut gb = Tensor::zeros(tb.rows(), tb.cols());
                    gemm(true, false, 1.0, g, ta, 0.0, &mut gb);
                    acc(*b, gb);
                }
            }
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.map(|x| -x));
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                acc(*a, g.zip_map(tb, |x, y| x * y));
                acc(*b, g.zip_map(ta, |x, y| x * y));
            }
            Op::AddRow(a, row) => {
                acc(*a, g.clone());
                let mut gr = Tensor::zeros(1, g.cols());
                for r in 0..g.rows() {
                    for (o, x) in gr.data_mut().iter_mut().zip(g.row_slice(r)) {
                        *o += x;
                    }
                }
                acc(*row, gr);
            }
            Op::Scale(a, s) => acc(*a, g.map(|x| x * s)),
            Op::AddScalar(a) => acc(*a, g.clone()),
            Op::Tanh(a) => {
                let y = node_owned(node);
                acc(*a, g.zip_map(y, |gi, yi| gi * (1.0 - yi * yi)));
            }
            Op::Sigmoid(a) => {
                let y = node_owned(node);
                acc(*a, g.zip_map(y, |gi, yi| gi * yi * (1.0 - yi)));
            }
            Op::Exp(a) => {
                let y = node_owned(node);
                acc(*a, g.zip_map(y, |gi, yi| gi * yi));
            }
            Op::Gelu(a) => {
                let x = self.value(*a);
                acc(
                    *a,
                    g.zip_map(x, |gi, xi| {
                        let u = GELU_C * (xi + 0.044715 * xi * xi * xi);
                        let th = u.tanh();
                        let du = GELU_C * (1.0 + 3.0 * 0.044715 * xi * xi);
                        gi * (0.5 * (1.0 + th) + 0.5 * xi * (1.0 - th * th) * du)
                    }),
                );
            }
            Op::Abs(a) => {
                let x = self.value(*a);
                acc(*a, g.zip_map(x, |gi, xi| if xi > 0.0 { gi } else if xi < 0.0 { -gi } else { 0.0 }));
            }
            Op::Square(a) => {
                let x = self.value(*a);
                acc(*a, g.zip_map(x, |gi, xi| 2.0 * gi * xi));
            }
            Op::Sum(a) => {
                let (r, c) = self.shape(*a);
                acc(*a, Tensor::filled(r, c, g.item()));
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for &p in parts {
                    let (r, c) = self.shape(p);
                    let mut gp = Tensor::zeros(r, c);
                    for row in 0..r {
                        gp.row_slice_mut(row).copy_from_slice(&g.row_slice(row)[off..off + c]);
                    }
                    off += c;
                    acc(p, gp);
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let (r, c) = self.shape(p);
                    let gp = Tensor::from_vec(r, c, g.data()[off * c..(off + r) * c].to_vec()).expect("concat rows");
                    off += r;
                    acc(p, gp);
                }
            }
            Op::SliceCols(a, start) => {
                let (r, c) = self.shape(*a);
                let mut ga = Tensor::zeros(r, c);
                for row in 0..r {
                    ga.row_slice_mut(row)[*start..*start + g.cols()].copy_from_slice(g.row_slice(row));
                }
                acc(*a, ga);
            }
            Op::SliceRows(a, start) => {
                let (r, c) = self.shape(*a);
                let mut ga = Tensor::zeros(r, c);
                ga.data_mut()[start * c..(start + g.rows()) * c].copy_from_slice(g.data());
                acc(*a, ga);
            }
            Op::GatherRows(a, idx) => {
                let (r, c) = self.shape(*a);
                let mut ga = Tensor::zeros(r, c);
                for (i, &j) in idx.iter().enumerate() {
                    for (o, x) in ga.row_slice_mut(j).iter_mut().zip(g.row_slice(i)) {
                        *o += x;
                    }
                }
                acc(*a, ga);
            }
            Op::Reshape(a) => {
                let (r, c) = self.shape(*a);
                acc(*a, g.clone().reshape(r, c).expect("reshape back"));
            }
            Op::LayerNorm { x, gamma, beta, xhat, inv_std } => {
                let tg = self.value(*gamma);
                let (rows, cols) = (xhat.rows(), xhat.cols());
                let mut gx = Tensor::zeros(rows, cols);
                let mut gg = Tensor::zeros(1, cols);
                let mut gb = Tensor::zeros(1, cols);
                let mut dxhat = vec![0.0; cols];
                for r in 0..rows {
                    let gr = g.row_slice(r);
                    let xr = xhat.row_slice(r);
                    let mut s1 = 0.0;
                    let mut s2 = 0.0;
                    for c in 0..cols {
                        gg.data_mut()[c] += gr[c] * xr[c];
                        gb.data_mut()[c] += gr[c];
                        dxhat[c] = gr[c] * tg.data()[c];
                        s1 += dxhat[c];
                        s2 += dxhat[c] * xr[c];
                    }
                    let n = cols as f64;
                    let out = gx.row_slice_mut(r);
                    for c in 0..cols {
                        out[c] = inv_std[r] / n * (n * dxhat[c] - s1 - xr[c] * s2);
                    }
                }
                acc(*x, gx);
                acc(*gamma, gg);
                acc(*beta, gb);
            }
            Op::Attention { q, k, v, heads, probs } => {
                let (tq, tk, tv) = (self.value(*q), self.value(*k), self.value(*v));
                let h = tq.cols();
                let d = h / heads;
                let scale = 1.0 / (d as f64).sqrt();
                let mut gq = Tensor::zeros(tq.rows(), h);
                let mut gk = Tensor::zeros(tk.rows(), h);
                let mut gv = Tensor::zeros(tv.rows(), h);
                for head in 0..*heads {
                    let p = &probs[head];
                    let go = cols_of(g, head * d, d);
                    let qh = cols_of(tq, head * d, d);
                    let kh = cols_of(tk, head * d, d);
                    let vh = cols_of(tv, head * d, d);
                    let mut gvh = Tensor::zeros(vh.rows(), d);
                    gemm(true, false, 1.0, p, &go, 0.0, &mut gvh);
                    let mut dp = Tensor::zeros(p.rows(), p.cols());
                    gemm(false, true, 1.0, &go, &vh, 0.0, &mut dp);
                    for r in 0..p.rows() {
                        let pr = p.row_slice(r);
                        let dr = dp.row_slice_mut(r);
                        let dot: f64 = pr.iter().zip(dr.iter()).map(|(a, b)| a * b).sum();
                        for c in 0..pr.len() {
                            dr[c] = pr[c] * (dr[c] - dot);
                        }
                    }
                    let mut gqh = Tensor::zeros(qh.rows(), d);
                    gemm(false, false, scale, &dp, &kh, 0.0, &mut gqh);
                    let mut gkh = Tensor::zeros(kh.rows(), d);
                    gemm(true, false, scale, &dp, &qh, 0.0, &mut gkh);
                    put_cols(&mut gq, &gqh, head * d);
                    put_cols(&mut gk, &gkh, head * d);
                    put_cols(&mut gv, &gvh, head * d);
                }
                acc(*q, gq);
                acc(*k, gk);
                acc(*v, gv);
            }
            Op::CrossEntropy { logits, targets, probs, count } => {
                if *count == 0 {
                    return;
                }
                let scale = g.item() / *count as f64;
                let mut gl = Tensor::zeros(probs.rows(), probs.cols());
                for (r, t) in targets.iter().enumerate() {
                    if let Some(t) = t {
                        let out = gl.row_slice_mut(r);
                        out.copy_from_slice(probs.row_slice(r));
                        out[*t] -= 1.0;
                        out.iter_mut().for_each(|x| *x *= scale);
                    }
                }
                acc(*logits, gl);
            }
        }
    }
}

fn node_owned(node: &Node) -> &Tensor {
    match &node.value {
        Value::Owned(t) => t,
        Value::Param(_) => unreachable!("op nodes own their values"),
    }
}

fn cols_of(t: &Tensor, start: usize, len: usize) -> Tensor {
    let mut out = Tensor::zeros(t.rows(), len);
    for r in 0..t.rows() {
        out.row_slice_mut(r).copy_from_slice(&t.row_slice(r)[start..start + len]);
    }
    out
}

fn put_cols(dst: &mut Tensor, src: &Tensor, start: usize) {
    for r in 0..src.rows() {
        dst.row_slice_mut(r)[start..start + src.cols()].copy_from_slice(src.row_slice(r));
    }
}

fn masked_softmax_rows(s: &mut Tensor, mask: &AttnMask) {
    let n = s.cols();
    for r in 0..s.rows() {
        let row = s.row_slice_mut(r);
        let mut max = f64::NEG_INFINITY;
        for (c, x) in row.iter().enumerate() {
            if mask.visible(r, c) && *x > max {
                max = *x;
            }
        }
        let mut z = 0.0;
        for c in 0..n {
            if mask.visible(r, c) {
                row[c] = (row[c] - max).exp();
                z += row[c];
            } else {
                row[c] = 0.0;
            }
        }
        for x in row.iter_mut() {
            *x /= z;
        }
    }
}

pub(crate) fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

/// Attention weights for inspection: one `T x (M+T)` matrix per head.
pub fn attention_weights(q: &Tensor, k: &Tensor, heads: usize, mask: &AttnMask) -> Vec<Tensor> {
    let d = q.cols() / heads;
    let scale = 1.0 / (d as f64).sqrt();
    (0..heads)
        .map(|head| {
            let qh = cols_of(q, head * d, d);
            let kh = cols_of(k, head * d, d);
            let mut s = Tensor::zeros(q.rows(), k.rows());
            gemm(false, true, scale, &qh, &kh, 0.0, &mut s);
            masked_softmax_rows(&mut s, mask);
            s
        })
        .collect()
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
