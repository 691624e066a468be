//! Eager computation graph with reverse-mode gradients.
//!
//! Every op computes its value when it is added, so a [`Graph`] doubles as
//! the forward pass. [`Graph::backward`] then walks the node list in reverse
//! insertion order, which is a valid topological order because a node can
//! only reference nodes created before it.
//!
//! Values are matrices (`[rows, cols]`). Parameters are read straight from
//! the borrowed [`ParamStore`], so building a graph never copies weights.
//!
//! ```
//! use pathmatch::ndiff::{Graph, ParamStore, Tensor};
//!
//! let mut store = ParamStore::new();
//! let x = store.insert("x", Tensor::row(vec![1.0, 2.0, 3.0])).unwrap();
//! let mut g = Graph::new(&store);
//! let xn = g.param(x);
//! let sq = g.mul(xn, xn).unwrap();
//! let loss = g.sum(sq);
//! assert_eq!(g.value(loss).item(), 14.0);
//! let grads = g.backward(loss).unwrap();
//! assert_eq!(grads.get(x).unwrap().data(), &[2.0, 4.0, 6.0]);
//! ```

use super::params::{Gradients, ParamId, ParamStore};
use super::tensor::{gemm, Tensor};
use crate::error::{Error, Result};

/// Lower clamp applied to probabilities before taking logarithms.
pub const PROB_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

#[derive(Debug, Clone)]
enum Op {
    Param(ParamId),
    Constant,
    Gather { table: ParamId, rows: Vec<usize> },
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    Relu(NodeId),
    Sigmoid(NodeId),
    Clamp(NodeId, f64, f64),
    Affine { x: NodeId, w: NodeId, b: Option<NodeId> },
    MatMulT(NodeId, NodeId),
    ConcatCols(Vec<NodeId>),
    ConcatRows(Vec<NodeId>),
    Reshape(NodeId),
    RepeatRows(NodeId, usize),
    SelectRows(NodeId, Vec<Option<usize>>),
    SelectBlocks { x: NodeId, block: usize, k: usize, idx: Vec<usize> },
    ScaleBlocks(NodeId, NodeId),
    SumBlocks(NodeId, usize),
    SoftmaxRows(NodeId),
    LogSoftmaxRows(NodeId),
    NormalizeRows(NodeId, f64),
    PickCols(NodeId, Vec<usize>),
    Sum(NodeId),
    Mean(NodeId),
    LogLoss(NodeId, Vec<f64>),
}

struct Node {
    op: Op,
    value: Tensor,
    requires_grad: bool,
}

pub struct Graph<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
}

fn check_same(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(op, format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn mat(rows: usize, cols: usize, data: Vec<f64>) -> Tensor {
    Tensor::new(vec![rows, cols], data).expect("internal shape")
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Self {
            params,
            nodes: Vec::new(),
        }
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        match &self.nodes[id.0].op {
            Op::Param(p) => self.params.get(*p),
            _ => &self.nodes[id.0].value,
        }
    }

    fn requires(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    fn push(&mut self, op: Op, value: Tensor, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    pub fn param(&mut self, id: ParamId) -> NodeId {
        self.push(Op::Param(id), Tensor::zeros(&[0]), true)
    }

    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Constant, value, false)
    }

    pub fn zeros(&mut self, rows: usize, cols: usize) -> NodeId {
        self.constant(Tensor::zeros(&[rows, cols]))
    }

    /// Look up rows of an embedding table. Row 0 is padding: it reads as
    /// zeros whatever the table holds and never receives gradient.
    pub fn gather(&mut self, table: ParamId, rows: Vec<usize>) -> Result<NodeId> {
        let t = self.params.get(table);
        let (n, d) = (t.rows(), t.cols());
        let mut out = Vec::with_capacity(rows.len() * d);
        for &r in &rows {
            if r >= n {
                return Err(Error::OutOfRange {
                    what: "embedding table",
                    index: r,
                    size: n,
                });
            }
            if r == 0 {
                out.extend(std::iter::repeat_n(0.0, d));
            } else {
                out.extend_from_slice(t.row_slice(r));
            }
        }
        let value = mat(rows.len(), d, out);
        Ok(self.push(Op::Gather { table, rows }, value, true))
    }

    fn zip_with(
        &mut self,
        name: &'static str,
        a: NodeId,
        b: NodeId,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        check_same(name, va, vb)?;
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| f(*x, *y)).collect();
        let value = Tensor::new(va.shape().to_vec(), data)?;
        let rg = self.requires(a) || self.requires(b);
        Ok(self.push(op, value, rg))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.zip_with("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.zip_with("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    /// Element-wise (Hadamard) product.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.zip_with("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn add_all(&mut self, terms: &[NodeId]) -> Result<NodeId> {
        let (first, rest) = terms
            .split_first()
            .ok_or_else(|| Error::InvalidArgument("add_all of nothing".into()))?;
        rest.iter().try_fold(*first, |acc, &t| self.add(acc, t))
    }

    fn map(&mut self, a: NodeId, f: impl Fn(f64) -> f64, op: Op) -> NodeId {
        let va = self.value(a);
        let value = Tensor::new(va.shape().to_vec(), va.data().iter().map(|x| f(*x)).collect())
            .expect("same shape");
        let rg = self.requires(a);
        self.push(op, value, rg)
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        self.map(a, |x| c * x, Op::Scale(a, c))
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        self.map(a, |x| x.max(0.0), Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        self.map(a, sigmoid, Op::Sigmoid(a))
    }

    /// Elementwise clamp to `[lo, hi]`; clamped entries pass no gradient.
    pub fn clamp(&mut self, a: NodeId, lo: f64, hi: f64) -> NodeId {
        self.map(a, |x| x.clamp(lo, hi), Op::Clamp(a, lo, hi))
    }

    /// `x · wᵀ + b` for `x: [n, in]`, `w: [out, in]`, `b: [out]`.
    pub fn affine(&mut self, x: NodeId, w: NodeId, b: Option<NodeId>) -> Result<NodeId> {
        let (vx, vw) = (self.value(x), self.value(w));
        let (n, din, dout) = (vx.rows(), vx.cols(), vw.rows());
        if vw.cols() != din {
            return Err(Error::shape(
                "affine",
                format!("input {:?} vs weight {:?}", vx.shape(), vw.shape()),
            ));
        }
        let mut out = vec![0.0; n * dout];
        if let Some(b) = b {
            let vb = self.value(b);
            if vb.len() != dout {
                return Err(Error::shape(
                    "affine",
                    format!("bias {:?} vs {dout} outputs", vb.shape()),
                ));
            }
            for row in out.chunks_mut(dout) {
                row.copy_from_slice(vb.data());
            }
        }
        gemm(n, din, dout, vx.data(), (din, 1), vw.data(), (1, din), 1.0, &mut out);
        let value = mat(n, dout, out);
        let rg = self.requires(x) || self.requires(w) || b.is_some_and(|b| self.requires(b));
        Ok(self.push(Op::Affine { x, w, b }, value, rg))
    }

    /// `a · bᵀ` for `a: [n, k]`, `b: [m, k]`.
    pub fn matmul_t(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        let (n, k, m) = (va.rows(), va.cols(), vb.rows());
        if vb.cols() != k {
            return Err(Error::shape(
                "matmul_t",
                format!("{:?} vs {:?}", va.shape(), vb.shape()),
            ));
        }
        let mut out = vec![0.0; n * m];
        gemm(n, k, m, va.data(), (k, 1), vb.data(), (1, k), 0.0, &mut out);
        let rg = self.requires(a) || self.requires(b);
        Ok(self.push(Op::MatMulT(a, b), mat(n, m, out), rg))
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::InvalidArgument("concat of nothing".into()));
        }
        let n = self.value(parts[0]).rows();
        let mut total = 0;
        for &p in parts {
            let v = self.value(p);
            if v.rows() != n {
                return Err(Error::shape(
                    "concat_cols",
                    format!("row counts {} vs {n}", v.rows()),
                ));
            }
            total += v.cols();
        }
        let mut out = Vec::with_capacity(n * total);
        for r in 0..n {
            for &p in parts {
                out.extend_from_slice(self.value(p).row_slice(r));
            }
        }
        let rg = parts.iter().any(|&p| self.requires(p));
        Ok(self.push(Op::ConcatCols(parts.to_vec()), mat(n, total, out), rg))
    }

    pub fn concat_rows(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::InvalidArgument("concat of nothing".into()));
        }
        let c = self.value(parts[0]).cols();
        let mut out = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let v = self.value(p);
            if v.cols() != c {
                return Err(Error::shape(
                    "concat_rows",
                    format!("column counts {} vs {c}", v.cols()),
                ));
            }
            rows += v.rows();
            out.extend_from_slice(v.data());
        }
        let rg = parts.iter().any(|&p| self.requires(p));
        Ok(self.push(Op::ConcatRows(parts.to_vec()), mat(rows, c, out), rg))
    }

    pub fn reshape(&mut self, a: NodeId, rows: usize, cols: usize) -> Result<NodeId> {
        let value = self.value(a).clone().reshape(&[rows, cols])?;
        let rg = self.requires(a);
        Ok(self.push(Op::Reshape(a), value, rg))
    }

    /// Repeat each row `times` times consecutively.
    pub fn repeat_rows(&mut self, a: NodeId, times: usize) -> NodeId {
        let va = self.value(a);
        let (n, c) = (va.rows(), va.cols());
        let mut out = Vec::with_capacity(n * c * times);
        for r in 0..n {
            for _ in 0..times {
                out.extend_from_slice(va.row_slice(r));
            }
        }
        let rg = self.requires(a);
        self.push(Op::RepeatRows(a, times), mat(n * times, c, out), rg)
    }

    /// Gather rows by index; `None` yields a zero row.
    pub fn select_rows(&mut self, a: NodeId, idx: Vec<Option<usize>>) -> Result<NodeId> {
        let va = self.value(a);
        let (n, c) = (va.rows(), va.cols());
        let mut out = Vec::with_capacity(idx.len() * c);
        for i in &idx {
            match *i {
                Some(r) if r >= n => {
                    return Err(Error::OutOfRange {
                        what: "select_rows",
                        index: r,
                        size: n,
                    })
                }
                Some(r) => out.extend_from_slice(va.row_slice(r)),
                None => out.extend(std::iter::repeat_n(0.0, c)),
            }
        }
        let rg = self.requires(a);
        let rows = idx.len();
        Ok(self.push(Op::SelectRows(a, idx), mat(rows, c, out), rg))
    }

    /// From each row of `x` (viewed as blocks of width `block`), keep `k`
    /// blocks given by `idx[row * k..(row + 1) * k]`, in that order.
    pub fn select_blocks(
        &mut self,
        x: NodeId,
        block: usize,
        k: usize,
        idx: Vec<usize>,
    ) -> Result<NodeId> {
        let vx = self.value(x);
        let (n, c) = (vx.rows(), vx.cols());
        if block == 0 || c % block != 0 || idx.len() != n * k {
            return Err(Error::shape(
                "select_blocks",
                format!("{:?} with block {block}, k {k}, {} indices", vx.shape(), idx.len()),
            ));
        }
        let nb = c / block;
        let mut out = Vec::with_capacity(n * k * block);
        for r in 0..n {
            let row = vx.row_slice(r);
            for &j in &idx[r * k..(r + 1) * k] {
                if j >= nb {
                    return Err(Error::OutOfRange {
                        what: "select_blocks",
                        index: j,
                        size: nb,
                    });
                }
                out.extend_from_slice(&row[j * block..(j + 1) * block]);
            }
        }
        let rg = self.requires(x);
        Ok(self.push(Op::SelectBlocks { x, block, k, idx }, mat(n, k * block, out), rg))
    }

    /// Multiply block `j` of row `r` of `x: [n, k·b]` by `s[r, j]`, `s: [n, k]`.
    pub fn scale_blocks(&mut self, x: NodeId, s: NodeId) -> Result<NodeId> {
        let (vx, vs) = (self.value(x), self.value(s));
        let (n, k) = (vs.rows(), vs.cols());
        if vx.rows() != n || k == 0 || vx.cols() % k != 0 {
            return Err(Error::shape(
                "scale_blocks",
                format!("{:?} by {:?}", vx.shape(), vs.shape()),
            ));
        }
        let b = vx.cols() / k;
        let mut out = vx.data().to_vec();
        for r in 0..n {
            for j in 0..k {
                let sc = vs.data()[r * k + j];
                let start = r * k * b + j * b;
                out[start..start + b].iter_mut().for_each(|v| *v *= sc);
            }
        }
        let rg = self.requires(x) || self.requires(s);
        let c = vx.cols();
        Ok(self.push(Op::ScaleBlocks(x, s), mat(n, c, out), rg))
    }

    /// Sum the blocks of width `block` in each row.
    pub fn sum_blocks(&mut self, x: NodeId, block: usize) -> Result<NodeId> {
        let vx = self.value(x);
        let (n, c) = (vx.rows(), vx.cols());
        if block == 0 || c % block != 0 {
            return Err(Error::shape("sum_blocks", format!("{c} columns, block {block}")));
        }
        let mut out = vec![0.0; n * block];
        for r in 0..n {
            for (j, v) in vx.row_slice(r).iter().enumerate() {
                out[r * block + j % block] += v;
            }
        }
        let rg = self.requires(x);
        Ok(self.push(Op::SumBlocks(x, block), mat(n, block, out), rg))
    }

    pub fn softmax_rows(&mut self, a: NodeId) -> NodeId {
        let va = self.value(a);
        let (n, c) = (va.rows(), va.cols());
        let mut out = Vec::with_capacity(n * c);
        for r in 0..n {
            out.extend(softmax(va.row_slice(r)));
        }
        let rg = self.requires(a);
        self.push(Op::SoftmaxRows(a), mat(n, c, out), rg)
    }

    pub fn log_softmax_rows(&mut self, a: NodeId) -> NodeId {
        let va = self.value(a);
        let (n, c) = (va.rows(), va.cols());
        let mut out = Vec::with_capacity(n * c);
        for r in 0..n {
            let row = va.row_slice(r);
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
            out.extend(row.iter().map(|x| x - lse));
        }
        let rg = self.requires(a);
        self.push(Op::LogSoftmaxRows(a), mat(n, c, out), rg)
    }

    /// Divide each row by `sqrt(|row|² + eps²)`; zero rows stay zero.
    pub fn normalize_rows(&mut self, a: NodeId, eps: f64) -> NodeId {
        let va = self.value(a);
        let (n, c) = (va.rows(), va.cols());
        let mut out = Vec::with_capacity(n * c);
        for r in 0..n {
            let row = va.row_slice(r);
            let norm = (row.iter().map(|x| x * x).sum::<f64>() + eps * eps).sqrt();
            out.extend(row.iter().map(|x| x / norm));
        }
        let rg = self.requires(a);
        self.push(Op::NormalizeRows(a, eps), mat(n, c, out), rg)
    }

    /// One column per row: `out[r] = a[r, cols[r]]`.
    pub fn pick_cols(&mut self, a: NodeId, cols: Vec<usize>) -> Result<NodeId> {
        let va = self.value(a);
        let (n, c) = (va.rows(), va.cols());
        if cols.len() != n {
            return Err(Error::shape("pick_cols", format!("{} picks for {n} rows", cols.len())));
        }
        let mut out = Vec::with_capacity(n);
        for (r, &j) in cols.iter().enumerate() {
            if j >= c {
                return Err(Error::OutOfRange {
                    what: "pick_cols",
                    index: j,
                    size: c,
                });
            }
            out.push(va.data()[r * c + j]);
        }
        let rg = self.requires(a);
        Ok(self.push(Op::PickCols(a, cols), mat(n, 1, out), rg))
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let s = self.value(a).data().iter().sum();
        let rg = self.requires(a);
        self.push(Op::Sum(a), Tensor::scalar(s), rg)
    }

    pub fn mean(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a);
        let s = v.data().iter().sum::<f64>() / v.len().max(1) as f64;
        let rg = self.requires(a);
        self.push(Op::Mean(a), Tensor::scalar(s), rg)
    }

    /// Mean binary negative log-likelihood of probabilities `p: [n, 1]`.
    /// Probabilities are clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]`.
    pub fn log_loss(&mut self, p: NodeId, labels: Vec<f64>) -> Result<NodeId> {
        let vp = self.value(p);
        if vp.len() != labels.len() || labels.is_empty() {
            return Err(Error::shape(
                "log_loss",
                format!("{} predictions vs {} labels", vp.len(), labels.len()),
            ));
        }
        let loss = log_loss_value(vp.data(), &labels);
        let rg = self.requires(p);
        Ok(self.push(Op::LogLoss(p, labels), Tensor::scalar(loss), rg))
    }

    /// Reverse-mode pass from a single-element node.
    pub fn backward(&self, root: NodeId) -> Result<Gradients> {
        if self.value(root).len() != 1 {
            return Err(Error::shape("backward", "root must be a scalar"));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        let mut out = Gradients::empty(self.params.len());
        grads[root.0] = Some(Tensor::filled(self.value(root).shape(), 1.0));

        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let gd = g.data();
            match &node.op {
                Op::Constant => {}
                Op::Param(p) => out.accumulate(*p, g),
                Op::Gather { table, rows } => {
                    let tg = out.slot(*table, self.params.get(*table));
                    let d = tg.cols();
                    let td = tg.data_mut();
                    for (i, &r) in rows.iter().enumerate() {
                        if r == 0 {
                            continue;
                        }
                        for (dst, src) in td[r * d..(r + 1) * d].iter_mut().zip(&gd[i * d..]) {
                            *dst += src;
                        }
                    }
                }
                Op::Add(a, b) => {
                    self.acc(&mut grads, *a, |s| add_into(s, gd));
                    self.acc(&mut grads, *b, |s| add_into(s, gd));
                }
                Op::Sub(a, b) => {
                    self.acc(&mut grads, *a, |s| add_into(s, gd));
                    self.acc(&mut grads, *b, |s| s.iter_mut().zip(gd).for_each(|(d, g)| *d -= g));
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                    self.acc(&mut grads, *a, |s| {
                        for ((d, g), y) in s.iter_mut().zip(gd).zip(vb) {
                            *d += g * y;
                        }
                    });
                    self.acc(&mut grads, *b, |s| {
                        for ((d, g), x) in s.iter_mut().zip(gd).zip(va) {
                            *d += g * x;
                        }
                    });
                }
                Op::Scale(a, c) => {
                    self.acc(&mut grads, *a, |s| s.iter_mut().zip(gd).for_each(|(d, g)| *d += c * g));
                }
                Op::Relu(a) => {
                    let va = self.value(*a).data();
                    self.acc(&mut grads, *a, |s| {
                        for ((d, g), x) in s.iter_mut().zip(gd).zip(va) {
                            if *x > 0.0 {
                                *d += g;
                            }
                        }
                    });
                }
                Op::Clamp(a, lo, hi) => {
                    let va = self.value(*a).data();
                    self.acc(&mut grads, *a, |s| {
                        for ((d, g), x) in s.iter_mut().zip(gd).zip(va) {
                            if *x > *lo && *x < *hi {
                                *d += g;
                            }
                        }
                    });
                }
                Op::Sigmoid(a) => {
                    let y = node.value.data();
                    self.acc(&mut grads, *a, |s| {
                        for ((d, g), y) in s.iter_mut().zip(gd).zip(y) {
                            *d += g * y * (1.0 - y);
                        }
                    });
                }
                Op::Affine { x, w, b } => {
                    let (vx, vw) = (self.value(*x), self.value(*w));
                    let (n, din, dout) = (vx.rows(), vx.cols(), vw.rows());
                    self.acc(&mut grads, *x, |s| {
                        gemm(n, dout, din, gd, (dout, 1), vw.data(), (din, 1), 1.0, s)
                    });
                    self.acc(&mut grads, *w, |s| {
                        gemm(dout, n, din, gd, (1, dout), vx.data(), (din, 1), 1.0, s)
                    });
                    if let Some(b) = b {
                        self.acc(&mut grads, *b, |s| {
                            for row in gd.chunks(dout) {
                                add_into(s, row);
                            }
                        });
                    }
                }
                Op::MatMulT(a, b) => {
                    let (va, vb) = (self.value(*a), self.value(*b));
                    let (n, k, m) = (va.rows(), va.cols(), vb.rows());
                    self.acc(&mut grads, *a, |s| {
                        gemm(n, m, k, gd, (m, 1), vb.data(), (k, 1), 1.0, s)
                    });
                    self.acc(&mut grads, *b, |s| {
                        gemm(m, n, k, gd, (1, m), va.data(), (k, 1), 1.0, s)
                    });
                }
                Op::ConcatCols(parts) => {
                    let n = g.rows();
                    let total = g.cols();
                    let mut offset = 0;
                    for &p in parts {
                        let c = self.value(p).cols();
                        self.acc(&mut grads, p, |s| {
                            for r in 0..n {
                                let src = &gd[r * total + offset..r * total + offset + c];
                                add_into(&mut s[r * c..(r + 1) * c], src);
                            }
                        });
                        offset += c;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let len = self.value(p).len();
                        self.acc(&mut grads, p, |s| add_into(s, &gd[offset..offset + len]));
                        offset += len;
                    }
                }
                Op::Reshape(a) => self.acc(&mut grads, *a, |s| add_into(s, gd)),
                Op::RepeatRows(a, times) => {
                    let c = g.cols();
                    self.acc(&mut grads, *a, |s| {
                        for (i, row) in gd.chunks(c).enumerate() {
                            let r = i / times;
                            add_into(&mut s[r * c..(r + 1) * c], row);
                        }
                    });
                }
                Op::SelectRows(a, idx) => {
                    let c = g.cols();
                    self.acc(&mut grads, *a, |s| {
                        for (i, r) in idx.iter().enumerate() {
                            if let Some(r) = r {
                                add_into(&mut s[r * c..(r + 1) * c], &gd[i * c..(i + 1) * c]);
                            }
                        }
                    });
                }
                Op::SelectBlocks { x, block, k, idx } => {
                    let c = self.value(*x).cols();
                    let oc = k * block;
                    self.acc(&mut grads, *x, |s| {
                        for (t, &j) in idx.iter().enumerate() {
                            let (r, slot) = (t / k, t % k);
                            let src = &gd[r * oc + slot * block..r * oc + (slot + 1) * block];
                            add_into(&mut s[r * c + j * block..r * c + (j + 1) * block], src);
                        }
                    });
                }
                Op::ScaleBlocks(x, sc) => {
                    let (vx, vs) = (self.value(*x), self.value(*sc));
                    let (n, k) = (vs.rows(), vs.cols());
                    let b = vx.cols() / k;
                    self.acc(&mut grads, *x, |s| {
                        for r in 0..n {
                            for j in 0..k {
                                let f = vs.data()[r * k + j];
                                let st = r * k * b + j * b;
                                for q in st..st + b {
                                    s[q] += gd[q] * f;
                                }
                            }
                        }
                    });
                    self.acc(&mut grads, *sc, |s| {
                        for r in 0..n {
                            for j in 0..k {
                                let st = r * k * b + j * b;
                                s[r * k + j] += (st..st + b).map(|q| gd[q] * vx.data()[q]).sum::<f64>();
                            }
                        }
                    });
                }
                Op::SumBlocks(x, block) => {
                    let c = self.value(*x).cols();
                    self.acc(&mut grads, *x, |s| {
                        for (q, d) in s.iter_mut().enumerate() {
                            let (r, j) = (q / c, q % c);
                            *d += gd[r * block + j % block];
                        }
                    });
                }
                Op::SoftmaxRows(a) => {
                    let y = &node.value;
                    let c = y.cols();
                    self.acc(&mut grads, *a, |s| {
                        for r in 0..y.rows() {
                            let yr = y.row_slice(r);
                            let gr = &gd[r * c..(r + 1) * c];
                            let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                            for j in 0..c {
                                s[r * c + j] += yr[j] * (gr[j] - dot);
                            }
                        }
                    });
                }
                Op::LogSoftmaxRows(a) => {
                    let y = &node.value;
                    let c = y.cols();
                    self.acc(&mut grads, *a, |s| {
                        for r in 0..y.rows() {
                            let yr = y.row_slice(r);
                            let gr = &gd[r * c..(r + 1) * c];
                            let total: f64 = gr.iter().sum();
                            for j in 0..c {
                                s[r * c + j] += gr[j] - yr[j].exp() * total;
                            }
                        }
                    });
                }
                Op::NormalizeRows(a, eps) => {
                    let va = self.value(*a);
                    let y = &node.value;
                    let c = y.cols();
                    self.acc(&mut grads, *a, |s| {
                        for r in 0..y.rows() {
                            let ar = va.row_slice(r);
                            let norm = (ar.iter().map(|x| x * x).sum::<f64>() + eps * eps).sqrt();
                            let yr = y.row_slice(r);
                            let gr = &gd[r * c..(r + 1) * c];
                            let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                            for j in 0..c {
                                s[r * c + j] += (gr[j] - yr[j] * dot) / norm;
                            }
                        }
                    });
                }
                Op::PickCols(a, cols) => {
                    let c = self.value(*a).cols();
                    self.acc(&mut grads, *a, |s| {
                        for (r, &j) in cols.iter().enumerate() {
                            s[r * c + j] += gd[r];
                        }
                    });
                }
                Op::Sum(a) => {
                    let g0 = gd[0];
                    self.acc(&mut grads, *a, |s| s.iter_mut().for_each(|d| *d += g0));
                }
                Op::Mean(a) => {
                    let g0 = gd[0] / self.value(*a).len().max(1) as f64;
                    self.acc(&mut grads, *a, |s| s.iter_mut().for_each(|d| *d += g0));
                }
                Op::LogLoss(p, labels) => {
                    let vp = self.value(*p).data();
                    let scale = gd[0] / labels.len() as f64;
                    self.acc(&mut grads, *p, |s| {
                        for ((d, &p), &y) in s.iter_mut().zip(vp).zip(labels) {
                            if p > PROB_CLAMP && p < 1.0 - PROB_CLAMP {
                                *d += -scale * (y / p - (1.0 - y) / (1.0 - p));
                            }
                        }
                    });
                }
            }
        }
        Ok(out)
    }

    fn acc(&self, grads: &mut [Option<Tensor>], id: NodeId, f: impl FnOnce(&mut [f64])) {
        if !self.requires(id) {
            return;
        }
        let slot = grads[id.0].get_or_insert_with(|| Tensor::zeros(self.value(id).shape()));
        f(slot.data_mut());
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// Numerically stable softmax of a slice.
pub fn softmax(v: &[f64]) -> Vec<f64> {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = v.iter().map(|x| (x - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|x| x / z).collect()
}

/// Mean binary negative log-likelihood with probability clamping.
pub fn log_loss_value(preds: &[f64], labels: &[f64]) -> f64 {
    let n = preds.len() as f64;
    -preds
        .iter()
        .zip(labels)
        .map(|(&p, &y)| {
            let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
            y * p.ln() + (1.0 - y) * (1.0 - p).ln()
        })
        .sum::<f64>()
        / n
}
