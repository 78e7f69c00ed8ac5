//! Define-by-run reverse-mode differentiation over dense matrices.
//!
//! A [`Tape`] records every operation of one forward pass. Handles ([`Var`])
//! are plain indices into the tape, so model code passes `&mut Tape` around
//! and keeps the handles by value. [`Tape::backward`] walks the record in
//! reverse and *accumulates* into each node's gradient; calling it twice
//! without [`Tape::zero_grad`] doubles every gradient.
//!
//! The operation set is deliberately small: exactly what typed projection,
//! relation attention, structure-aware gating, cross-relation attention and
//! the two classification losses need. Every reduction runs in a fixed
//! ascending index order so forward values are bit-reproducible.

use std::rc::Rc;

use thiserror::Error;

use crate::params::ParamId;
use crate::tensor::{lit, Mat, Real};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiffError {
    #[error("{op}: shape mismatch {left:?} vs {right:?}")]
    Shape { op: &'static str, left: (usize, usize), right: (usize, usize) },
    #[error("{op}: group {group} has no members")]
    EmptyGroup { op: &'static str, group: usize },
    #[error("{op}: index {index} out of range for {len} rows")]
    Index { op: &'static str, index: usize, len: usize },
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("binary cross entropy expects 0/1 labels, got {0}")]
    NonBinaryLabel(String),
    #[error("{0}")]
    Contract(String),
}

pub type DiffResult<T> = Result<T, DiffError>;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Row partition used by the grouped softmax and grouped weighted sum.
///
/// `ids[i]` is the group of row `i`; groups are `0..num_groups`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segments {
    ids: Vec<usize>,
    num_groups: usize,
}

impl Segments {
    pub fn new(ids: Vec<usize>, num_groups: usize) -> DiffResult<Self> {
        if let Some(&bad) = ids.iter().find(|&&g| g >= num_groups) {
            return Err(DiffError::Index { op: "segments", index: bad, len: num_groups });
        }
        Ok(Self { ids, num_groups })
    }

    /// Contiguous runs: `sizes[g]` consecutive rows belong to group `g`.
    pub fn from_sizes(sizes: &[usize]) -> Self {
        let ids = sizes.iter().enumerate().flat_map(|(g, &n)| std::iter::repeat(g).take(n)).collect();
        Self { ids, num_groups: sizes.len() }
    }

    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn num_groups(&self) -> usize {
        self.num_groups
    }

    fn require_nonempty(&self, op: &'static str) -> DiffResult<()> {
        let mut seen = vec![false; self.num_groups];
        for &g in &self.ids {
            seen[g] = true;
        }
        match seen.iter().position(|s| !s) {
            Some(group) => Err(DiffError::EmptyGroup { op, group }),
            None => Ok(()),
        }
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Scale(Var, f64),
    LeakyRelu(Var, f64),
    Concat(Vec<Var>),
    StackRows(Vec<Var>),
    Gather(Var, Rc<[usize]>),
    SliceCols(Var, usize),
    SegmentSoftmax(Rc<Segments>),
    SegmentSum(Var, Var, Rc<Segments>),
    SoftmaxRows,
    MixRows(Var, Vec<Var>),
    CrossEntropy(Var, Rc<[usize]>),
    BinaryCrossEntropy(Var, Rc<[bool]>),
}

#[derive(Debug, Clone)]
struct Node<F> {
    value: Mat<F>,
    grad: Option<Mat<F>>,
    op: Op,
    // input of unary ops whose backward needs only their own output
    src: Option<Var>,
}

/// One forward pass worth of recorded operations.
#[derive(Debug, Clone)]
pub struct Tape<F> {
    nodes: Vec<Node<F>>,
}

impl<F: Real> Default for Tape<F> {
    fn default() -> Self {
        Self::new()
    }
}

fn shape_err(op: &'static str, left: (usize, usize), right: (usize, usize)) -> DiffError {
    DiffError::Shape { op, left, right }
}

impl<F: Real> Tape<F> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Mat<F>, op: Op) -> Var {
        self.push_src(value, op, None)
    }

    fn push_src(&mut self, value: Mat<F>, op: Op, src: Option<Var>) -> Var {
        self.nodes.push(Node { value, grad: None, op, src });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Mat<F> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    /// Accumulated gradient of `v`, or `None` when backward never reached it.
    pub fn grad(&self, v: Var) -> Option<&Mat<F>> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    /// Differentiable input that is not a stored parameter.
    pub fn leaf(&mut self, value: Mat<F>) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Constant input; identical to [`Tape::leaf`], named for readability.
    pub fn constant(&mut self, value: Mat<F>) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Leaf bound to a stored parameter; its gradient is reported by
    /// [`Tape::param_grads`].
    pub fn param(&mut self, id: ParamId, value: &Mat<F>) -> Var {
        self.push(value.clone(), Op::Param(id))
    }

    /// `x · w`.
    pub fn matmul(&mut self, x: Var, w: Var) -> DiffResult<Var> {
        let (a, b) = (self.value(x), self.value(w));
        if a.cols() != b.rows() {
            return Err(shape_err("matmul", a.shape(), b.shape()));
        }
        let out = a.matmul(b);
        Ok(self.push(out, Op::MatMul(x, w)))
    }

    /// Adds the `1×d` row `b` to every row of `x`.
    pub fn add_bias(&mut self, x: Var, b: Var) -> DiffResult<Var> {
        let (xv, bv) = (self.value(x), self.value(b));
        if bv.rows() != 1 || bv.cols() != xv.cols() {
            return Err(shape_err("add_bias", xv.shape(), bv.shape()));
        }
        let mut out = xv.clone();
        for r in 0..out.rows() {
            for (o, &bb) in out.row_mut(r).iter_mut().zip(bv.data()) {
                *o += bb;
            }
        }
        Ok(self.push(out, Op::AddBias(x, b)))
    }

    /// Dense layer `x·W (+ b)`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> DiffResult<Var> {
        let y = self.matmul(x, w)?;
        match b {
            Some(b) => self.add_bias(y, b),
            None => Ok(y),
        }
    }

    pub fn add(&mut self, a: Var, b: Var) -> DiffResult<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(shape_err("add", av.shape(), bv.shape()));
        }
        let mut out = av.clone();
        out.add_assign(bv);
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let mut out = self.value(x).clone();
        out.scale(lit(s));
        self.push(out, Op::Scale(x, s))
    }

    /// Elementwise `max(x, 0) + slope·min(x, 0)`; `slope = 0` is the plain rectifier.
    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        let s: F = lit(slope);
        let mut out = self.value(x).clone();
        for v in out.data_mut() {
            if *v <= F::zero() {
                *v *= s;
            }
        }
        self.push(out, Op::LeakyRelu(x, slope))
    }

    /// Horizontal concatenation `[p₀ ∥ p₁ ∥ …]`, columns in argument order.
    pub fn concat(&mut self, parts: &[Var]) -> DiffResult<Var> {
        let first = parts.first().ok_or_else(|| DiffError::Contract("concat of zero parts".into()))?;
        let rows = self.shape(*first).0;
        let mut cols = 0;
        for &p in parts {
            let s = self.shape(p);
            if s.0 != rows {
                return Err(shape_err("concat", self.shape(*first), s));
            }
            cols += s.1;
        }
        let mut out = Mat::zeros(rows, cols);
        for r in 0..rows {
            let mut off = 0;
            for &p in parts {
                let src = self.value(p).row(r);
                out.row_mut(r)[off..off + src.len()].copy_from_slice(src);
                off += src.len();
            }
        }
        Ok(self.push(out, Op::Concat(parts.to_vec())))
    }

    /// Vertical concatenation; all parts share the column count.
    pub fn stack_rows(&mut self, parts: &[Var]) -> DiffResult<Var> {
        let first = parts.first().ok_or_else(|| DiffError::Contract("stack of zero parts".into()))?;
        let cols = self.shape(*first).1;
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let v = self.value(p);
            if v.cols() != cols {
                return Err(shape_err("stack_rows", self.shape(*first), v.shape()));
            }
            rows += v.rows();
            data.extend_from_slice(v.data());
        }
        Ok(self.push(Mat::from_vec(rows, cols, data), Op::StackRows(parts.to_vec())))
    }

    /// Row selection `out[i] = x[index[i]]`; indices may repeat.
    pub fn gather(&mut self, x: Var, index: Rc<[usize]>) -> DiffResult<Var> {
        let xv = self.value(x);
        let mut out = Mat::zeros(index.len(), xv.cols());
        for (i, &r) in index.iter().enumerate() {
            if r >= xv.rows() {
                return Err(DiffError::Index { op: "gather", index: r, len: xv.rows() });
            }
            out.row_mut(i).copy_from_slice(xv.row(r));
        }
        Ok(self.push(out, Op::Gather(x, index)))
    }

    /// Columns `start..start+width`.
    pub fn slice_cols(&mut self, x: Var, start: usize, width: usize) -> DiffResult<Var> {
        let xv = self.value(x);
        if start + width > xv.cols() {
            return Err(shape_err("slice_cols", xv.shape(), (start, width)));
        }
        let mut out = Mat::zeros(xv.rows(), width);
        for r in 0..xv.rows() {
            out.row_mut(r).copy_from_slice(&xv.row(r)[start..start + width]);
        }
        Ok(self.push(out, Op::SliceCols(x, start)))
    }

    /// Softmax of an `n×1` column within each group of `groups`, using
    /// per-group max subtraction. Every group must be nonempty.
    pub fn masked_softmax(&mut self, logits: Var, groups: Rc<Segments>) -> DiffResult<Var> {
        let lv = self.value(logits);
        if lv.cols() != 1 || lv.rows() != groups.len() {
            return Err(shape_err("masked_softmax", lv.shape(), (groups.len(), 1)));
        }
        groups.require_nonempty("masked_softmax")?;
        let g = groups.num_groups();
        let mut max = vec![F::neg_infinity(); g];
        for (i, &gi) in groups.ids().iter().enumerate() {
            max[gi] = max[gi].max(lv.data()[i]);
        }
        let mut out = Mat::zeros(lv.rows(), 1);
        let mut denom = vec![F::zero(); g];
        for (i, &gi) in groups.ids().iter().enumerate() {
            let e = (lv.data()[i] - max[gi]).exp();
            out.data_mut()[i] = e;
            denom[gi] += e;
        }
        for (i, &gi) in groups.ids().iter().enumerate() {
            out.data_mut()[i] /= denom[gi];
        }
        Ok(self.push_src(out, Op::SegmentSoftmax(groups), Some(logits)))
    }

    /// `out[g] = Σ_{i ∈ g} w[i]·rows[i]`, summed in ascending `i`; empty
    /// groups yield zero rows.
    pub fn weighted_sum(&mut self, weights: Var, rows: Var, groups: Rc<Segments>) -> DiffResult<Var> {
        let (wv, rv) = (self.value(weights), self.value(rows));
        if wv.cols() != 1 || wv.rows() != rv.rows() || rv.rows() != groups.len() {
            return Err(shape_err("weighted_sum", wv.shape(), rv.shape()));
        }
        let mut out = Mat::zeros(groups.num_groups(), rv.cols());
        for (i, &g) in groups.ids().iter().enumerate() {
            let w = wv.data()[i];
            let src = rv.row(i);
            for (o, &x) in out.row_mut(g).iter_mut().zip(src) {
                *o += w * x;
            }
        }
        Ok(self.push(out, Op::SegmentSum(weights, rows, groups)))
    }

    /// Softmax across the columns of every row.
    pub fn softmax_rows(&mut self, x: Var) -> Var {
        let mut out = self.value(x).clone();
        for r in 0..out.rows() {
            let row = out.row_mut(r);
            let m = row.iter().fold(F::neg_infinity(), |a, &b| a.max(b));
            let mut s = F::zero();
            for v in row.iter_mut() {
                *v = (*v - m).exp();
                s += *v;
            }
            for v in row.iter_mut() {
                *v /= s;
            }
        }
        self.push_src(out, Op::SoftmaxRows, Some(x))
    }

    /// `out[i] = Σ_k w[i,k]·parts[k][i]`, `k` ascending.
    pub fn mix_rows(&mut self, weights: Var, parts: &[Var]) -> DiffResult<Var> {
        let wv = self.value(weights);
        if wv.cols() != parts.len() || parts.is_empty() {
            return Err(shape_err("mix_rows", wv.shape(), (wv.rows(), parts.len())));
        }
        let shape = self.shape(parts[0]);
        if shape.0 != wv.rows() {
            return Err(shape_err("mix_rows", wv.shape(), shape));
        }
        for &p in parts {
            if self.shape(p) != shape {
                return Err(shape_err("mix_rows", shape, self.shape(p)));
            }
        }
        let mut out = Mat::zeros(shape.0, shape.1);
        for (k, &p) in parts.iter().enumerate() {
            let pv = self.value(p);
            for i in 0..shape.0 {
                let w = wv.get(i, k);
                for (o, &x) in out.row_mut(i).iter_mut().zip(pv.row(i)) {
                    *o += w * x;
                }
            }
        }
        Ok(self.push(out, Op::MixRows(weights, parts.to_vec())))
    }

    /// Mean softmax cross entropy over rows; `1×1` result.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> DiffResult<Var> {
        let lv = self.value(logits);
        if lv.rows() != labels.len() || lv.rows() == 0 {
            return Err(shape_err("cross_entropy", lv.shape(), (labels.len(), lv.cols())));
        }
        let c = lv.cols();
        let mut total = F::zero();
        for (i, &y) in labels.iter().enumerate() {
            if y >= c {
                return Err(DiffError::LabelOutOfRange { label: y, classes: c });
            }
            let row = lv.row(i);
            total += log_sum_exp(row) - row[y];
        }
        let n: F = lit(labels.len() as f64);
        let out = Mat::from_vec(1, 1, vec![total / n]);
        Ok(self.push(out, Op::CrossEntropy(logits, labels.into())))
    }

    /// Mean binary cross entropy with logits over all `n·C` entries.
    /// `labels` is row-major `n×C`.
    pub fn binary_cross_entropy(&mut self, logits: Var, labels: &[u8]) -> DiffResult<Var> {
        let lv = self.value(logits);
        if lv.len() != labels.len() || lv.is_empty() {
            return Err(shape_err("binary_cross_entropy", lv.shape(), (labels.len(), 1)));
        }
        if let Some(bad) = labels.iter().find(|&&y| y > 1) {
            return Err(DiffError::NonBinaryLabel(bad.to_string()));
        }
        let mut total = F::zero();
        for (&z, &y) in lv.data().iter().zip(labels) {
            let yv = if y == 1 { F::one() } else { F::zero() };
            total += z.max(F::zero()) - z * yv + (-z.abs()).exp().ln_1p();
        }
        let n: F = lit(labels.len() as f64);
        let flags: Rc<[bool]> = labels.iter().map(|&y| y == 1).collect();
        Ok(self.push(Mat::from_vec(1, 1, vec![total / n]), Op::BinaryCrossEntropy(logits, flags)))
    }

    /// Seeds `d out / d out = 1` and accumulates gradients into every node
    /// reachable backwards from `out`.
    pub fn backward(&mut self, out: Var) {
        let n = out.0 + 1;
        let mut adj: Vec<Option<Mat<F>>> = vec![None; n];
        let (r, c) = self.shape(out);
        adj[out.0] = Some(Mat::filled(r, c, F::one()));

        for idx in (0..n).rev() {
            let Some(g) = adj[idx].take() else { continue };
            self.backprop_node(idx, &g, &mut adj);
            let node = &mut self.nodes[idx];
            match &mut node.grad {
                Some(acc) => acc.add_assign(&g),
                None => node.grad = Some(g),
            }
        }
    }

    fn backprop_node(&self, idx: usize, g: &Mat<F>, adj: &mut [Option<Mat<F>>]) {
        let node = &self.nodes[idx];
        match &node.op {
            Op::Leaf | Op::Param(_) => {}
            Op::MatMul(x, w) => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                accumulate(adj, *x, g.matmul_t(wv));
                accumulate(adj, *w, xv.t_matmul(g));
            }
            Op::AddBias(x, b) => {
                let mut db = Mat::zeros(1, g.cols());
                for r in 0..g.rows() {
                    for (d, &v) in db.data_mut().iter_mut().zip(g.row(r)) {
                        *d += v;
                    }
                }
                accumulate(adj, *x, g.clone());
                accumulate(adj, *b, db);
            }
            Op::Add(a, b) => {
                accumulate(adj, *a, g.clone());
                accumulate(adj, *b, g.clone());
            }
            Op::Scale(x, s) => {
                let mut d = g.clone();
                d.scale(lit(*s));
                accumulate(adj, *x, d);
            }
            Op::LeakyRelu(x, slope) => {
                let s: F = lit(*slope);
                let xv = self.value(*x);
                let mut d = g.clone();
                for (dv, &xi) in d.data_mut().iter_mut().zip(xv.data()) {
                    if xi <= F::zero() {
                        *dv *= s;
                    }
                }
                accumulate(adj, *x, d);
            }
            Op::Concat(parts) => {
                let mut off = 0;
                for &p in parts {
                    let w = self.shape(p).1;
                    let mut d = Mat::zeros(g.rows(), w);
                    for r in 0..g.rows() {
                        d.row_mut(r).copy_from_slice(&g.row(r)[off..off + w]);
                    }
                    off += w;
                    accumulate(adj, p, d);
                }
            }
            Op::StackRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let (rows, cols) = self.shape(p);
                    let d = Mat::from_vec(rows, cols, g.data()[off * cols..(off + rows) * cols].to_vec());
                    off += rows;
                    accumulate(adj, p, d);
                }
            }
            Op::Gather(x, index) => {
                let (rows, cols) = self.shape(*x);
                let mut d = Mat::zeros(rows, cols);
                for (i, &r) in index.iter().enumerate() {
                    for (dv, &gv) in d.row_mut(r).iter_mut().zip(g.row(i)) {
                        *dv += gv;
                    }
                }
                accumulate(adj, *x, d);
            }
            Op::SliceCols(x, start) => {
                let (rows, cols) = self.shape(*x);
                let mut d = Mat::zeros(rows, cols);
                for r in 0..rows {
                    d.row_mut(r)[*start..*start + g.cols()].copy_from_slice(g.row(r));
                }
                accumulate(adj, *x, d);
            }
            Op::SegmentSoftmax(groups) => {
                let y = &node.value;
                let mut dot = vec![F::zero(); groups.num_groups()];
                for (i, &gi) in groups.ids().iter().enumerate() {
                    dot[gi] += y.data()[i] * g.data()[i];
                }
                let mut d = Mat::zeros(y.rows(), 1);
                for (i, &gi) in groups.ids().iter().enumerate() {
                    d.data_mut()[i] = y.data()[i] * (g.data()[i] - dot[gi]);
                }
                accumulate(adj, node.src.expect("softmax input"), d);
            }
            Op::SegmentSum(w, rows, groups) => {
                let (wv, rv) = (self.value(*w), self.value(*rows));
                let mut dw = Mat::zeros(wv.rows(), 1);
                let mut dr = Mat::zeros(rv.rows(), rv.cols());
                for (i, &gi) in groups.ids().iter().enumerate() {
                    let go = g.row(gi);
                    let mut acc = F::zero();
                    for (&a, &b) in go.iter().zip(rv.row(i)) {
                        acc += a * b;
                    }
                    dw.data_mut()[i] = acc;
                    let wi = wv.data()[i];
                    for (d, &a) in dr.row_mut(i).iter_mut().zip(go) {
                        *d = wi * a;
                    }
                }
                accumulate(adj, *w, dw);
                accumulate(adj, *rows, dr);
            }
            Op::SoftmaxRows => {
                let y = &node.value;
                let mut d = Mat::zeros(y.rows(), y.cols());
                for r in 0..y.rows() {
                    let (yr, gr) = (y.row(r), g.row(r));
                    let mut dot = F::zero();
                    for (&a, &b) in yr.iter().zip(gr) {
                        dot += a * b;
                    }
                    for ((dv, &a), &b) in d.row_mut(r).iter_mut().zip(yr).zip(gr) {
                        *dv = a * (b - dot);
                    }
                }
                accumulate(adj, node.src.expect("softmax input"), d);
            }
            Op::MixRows(w, parts) => {
                let wv = self.value(*w);
                let mut dw = Mat::zeros(wv.rows(), wv.cols());
                for (k, &p) in parts.iter().enumerate() {
                    let pv = self.value(p);
                    let mut dp = Mat::zeros(pv.rows(), pv.cols());
                    for i in 0..pv.rows() {
                        let gi = g.row(i);
                        let mut acc = F::zero();
                        for (&a, &b) in gi.iter().zip(pv.row(i)) {
                            acc += a * b;
                        }
                        dw.set(i, k, acc);
                        let wik = wv.get(i, k);
                        for (d, &a) in dp.row_mut(i).iter_mut().zip(gi) {
                            *d = wik * a;
                        }
                    }
                    accumulate(adj, p, dp);
                }
                accumulate(adj, *w, dw);
            }
            Op::CrossEntropy(logits, labels) => {
                let lv = self.value(*logits);
                let scale = g.data()[0] / lit::<F>(labels.len() as f64);
                let mut d = Mat::zeros(lv.rows(), lv.cols());
                for (i, &y) in labels.iter().enumerate() {
                    let row = lv.row(i);
                    let lse = log_sum_exp(row);
                    for (c, dv) in d.row_mut(i).iter_mut().enumerate() {
                        let p = (row[c] - lse).exp();
                        let t = if c == y { F::one() } else { F::zero() };
                        *dv = (p - t) * scale;
                    }
                }
                accumulate(adj, *logits, d);
            }
            Op::BinaryCrossEntropy(logits, labels) => {
                let lv = self.value(*logits);
                let scale = g.data()[0] / lit::<F>(labels.len() as f64);
                let mut d = Mat::zeros(lv.rows(), lv.cols());
                for ((dv, &z), &y) in d.data_mut().iter_mut().zip(lv.data()).zip(labels.iter()) {
                    let t = if y { F::one() } else { F::zero() };
                    *dv = (sigmoid(z) - t) * scale;
                }
                accumulate(adj, *logits, d);
            }
        }
    }

    /// Gradients of every parameter leaf, summed per parameter id.
    pub fn param_grads(&self) -> Vec<(ParamId, Mat<F>)> {
        let mut out: Vec<(ParamId, Mat<F>)> = Vec::new();
        for n in &self.nodes {
            if let (Op::Param(id), Some(g)) = (&n.op, &n.grad) {
                match out.iter_mut().find(|(i, _)| i == id) {
                    Some((_, acc)) => acc.add_assign(g),
                    None => out.push((*id, g.clone())),
                }
            }
        }
        out
    }
}

fn accumulate<F: Real>(adj: &mut [Option<Mat<F>>], v: Var, d: Mat<F>) {
    match &mut adj[v.0] {
        Some(acc) => acc.add_assign(&d),
        slot @ None => *slot = Some(d),
    }
}

pub(crate) fn log_sum_exp<F: Real>(row: &[F]) -> F {
    let m = row.iter().fold(F::neg_infinity(), |a, &b| a.max(b));
    let s: F = row.iter().map(|&x| (x - m).exp()).sum();
    m + s.ln()
}

pub(crate) fn sigmoid<F: Real>(z: F) -> F {
    if z >= F::zero() {
        F::one() / (F::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (F::one() + e)
    }
}
