//! Tape of recorded operations and the reverse sweep over it.

use std::collections::HashMap;
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::params::{ParamId, ParameterStore};
use super::tensor::{Real, Tensor};
use crate::NnError;

static NEXT_GRAPH_ID: AtomicU64 = AtomicU64::new(1);

const LAYER_NORM_EPS: f64 = 1e-5;

/// Handle to a node of one particular [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var {
    graph: u64,
    idx: usize,
}

enum Value<T> {
    Owned(Tensor<T>),
    Param(ParamId),
}

enum Op<T> {
    Leaf,
    Param(ParamId),
    MatMul { a: usize, b: usize, a_t: bool, b_t: bool },
    Add(usize, usize),
    AddRow(usize, usize),
    AddCol(usize, usize),
    Mul(usize, usize),
    MulRow(usize, usize),
    Scale(usize, T),
    ConcatCols(Vec<usize>),
    ConcatRows(Vec<usize>),
    SliceCols { a: usize, start: usize },
    SliceRows { a: usize, start: usize },
    SelectRows { a: usize, idx: Rc<[usize]> },
    Transpose(usize),
    Tanh(usize),
    Sigmoid(usize),
    RowSoftmax(usize),
    LogSoftmax(usize),
    GatherCols { a: usize, idx: Rc<[usize]> },
    ScatterCols { a: usize, idx: Rc<[usize]> },
    Dropout { a: usize, mask: Vec<T> },
    LayerNorm { a: usize, rstd: Vec<T> },
    CrossEntropy { a: usize, targets: Vec<usize>, probs: Tensor<T> },
    Sum(usize),
    ChunkDot { a: usize, b: usize },
}

struct Node<T> {
    value: Value<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Gradients of a scalar loss with respect to every parameter that took
/// part in the forward pass, indexed by [`ParamId`].
#[derive(Clone, Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, id: ParamId) -> Option<&Tensor<T>> {
        self.grads.get(id.0).and_then(Option::as_ref)
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.iter().all(Option::is_none)
    }

    /// Sum of squares over all entries.
    pub fn squared_norm(&self) -> f64 {
        self.grads
            .iter()
            .flatten()
            .flat_map(|t| t.data.iter())
            .map(|v| {
                let v = v.to_f64().unwrap_or(f64::NAN);
                v * v
            })
            .sum()
    }
}

/// A single forward pass. Parameters are read from the borrowed store;
/// values of every intermediate are kept until [`Graph::backward`].
pub struct Graph<'p, T: Real> {
    id: u64,
    params: &'p ParameterStore<T>,
    nodes: Vec<Node<T>>,
    param_nodes: HashMap<ParamId, usize>,
    training: bool,
    rng: ChaCha8Rng,
    backward_done: bool,
}

fn shape_err(op: &'static str, l: [usize; 2], r: [usize; 2]) -> NnError {
    NnError::Shape { op, left: l, right: r }
}

fn add_into<T: Real>(dst: &mut [T], src: &[T]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d = *d + *s;
    }
}

impl<'p, T: Real> Graph<'p, T> {
    /// Inference graph: dropout is the identity.
    pub fn new(params: &'p ParameterStore<T>) -> Self {
        Self::with_mode(params, false, 0)
    }

    /// Training graph; dropout masks are drawn from a generator seeded
    /// with `seed`.
    pub fn training(params: &'p ParameterStore<T>, seed: u64) -> Self {
        Self::with_mode(params, true, seed)
    }

    fn with_mode(params: &'p ParameterStore<T>, training: bool, seed: u64) -> Self {
        Graph {
            id: NEXT_GRAPH_ID.fetch_add(1, Ordering::Relaxed),
            params,
            nodes: Vec::new(),
            param_nodes: HashMap::new(),
            training,
            rng: ChaCha8Rng::seed_from_u64(seed),
            backward_done: false,
        }
    }

    pub fn is_training(&self) -> bool {
        self.training
    }

    pub fn params(&self) -> &'p ParameterStore<T> {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn idx(&self, v: Var) -> Result<usize, NnError> {
        if v.graph != self.id || v.idx >= self.nodes.len() {
            return Err(NnError::DetachedGraph);
        }
        Ok(v.idx)
    }

    fn val(&self, i: usize) -> &Tensor<T> {
        match &self.nodes[i].value {
            Value::Owned(t) => t,
            Value::Param(id) => self.params.value(*id),
        }
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        assert_eq!(v.graph, self.id, "variable from another graph");
        self.val(v.idx)
    }

    pub fn shape(&self, v: Var) -> [usize; 2] {
        self.value(v).shape()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[usize]) -> Var {
        let requires_grad = inputs.iter().any(|&i| self.nodes[i].requires_grad);
        self.nodes.push(Node {
            value: Value::Owned(value),
            op,
            requires_grad,
        });
        Var {
            graph: self.id,
            idx: self.nodes.len() - 1,
        }
    }

    /// A value that receives no gradient.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value: Value::Owned(t),
            op: Op::Leaf,
            requires_grad: false,
        });
        Var {
            graph: self.id,
            idx: self.nodes.len() - 1,
        }
    }

    /// Leaf for a trainable parameter; repeated calls share one node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&idx) = self.param_nodes.get(&id) {
            return Var { graph: self.id, idx };
        }
        self.nodes.push(Node {
            value: Value::Param(id),
            op: Op::Param(id),
            requires_grad: true,
        });
        let idx = self.nodes.len() - 1;
        self.param_nodes.insert(id, idx);
        Var { graph: self.id, idx }
    }

    fn matmul_impl(&mut self, a: Var, b: Var, a_t: bool, b_t: bool) -> Result<Var, NnError> {
        let (ai, bi) = (self.idx(a)?, self.idx(b)?);
        let (sa, sb) = (self.val(ai).shape(), self.val(bi).shape());
        let (m, k) = if a_t { (sa[1], sa[0]) } else { (sa[0], sa[1]) };
        let (k2, n) = if b_t { (sb[1], sb[0]) } else { (sb[0], sb[1]) };
        if k != k2 {
            return Err(shape_err("matmul", sa, sb));
        }
        let mut out = Tensor::zeros(m, n);
        T::gemm(m, k, n, &self.val(ai).data, a_t, &self.val(bi).data, b_t, &mut out.data, T::zero());
        Ok(self.push(out, Op::MatMul { a: ai, b: bi, a_t, b_t }, &[ai, bi]))
    }

    /// `a · b`
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        self.matmul_impl(a, b, false, false)
    }

    /// `a · bᵀ`
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        self.matmul_impl(a, b, false, true)
    }

    fn elementwise(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(T, T) -> T,
        op: impl FnOnce(usize, usize) -> Op<T>,
    ) -> Result<Var, NnError> {
        let (ai, bi) = (self.idx(a)?, self.idx(b)?);
        let (ta, tb) = (self.val(ai), self.val(bi));
        if ta.shape() != tb.shape() {
            return Err(shape_err(name, ta.shape(), tb.shape()));
        }
        let data = ta.data.iter().zip(&tb.data).map(|(x, y)| f(*x, *y)).collect();
        let out = Tensor::from_vec(ta.rows, ta.cols, data);
        Ok(self.push(out, op(ai, bi), &[ai, bi]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        self.elementwise("add", a, b, |x, y| x + y, Op::Add)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        self.elementwise("mul", a, b, |x, y| x * y, Op::Mul)
    }

    fn row_broadcast(
        &mut self,
        name: &'static str,
        a: Var,
        row: Var,
        f: impl Fn(T, T) -> T,
        op: impl FnOnce(usize, usize) -> Op<T>,
    ) -> Result<Var, NnError> {
        let (ai, ri) = (self.idx(a)?, self.idx(row)?);
        let (ta, tr) = (self.val(ai), self.val(ri));
        if tr.rows != 1 || tr.cols != ta.cols {
            return Err(shape_err(name, ta.shape(), tr.shape()));
        }
        let mut out = ta.clone();
        for r in 0..out.rows {
            for (o, b) in out.row_mut(r).iter_mut().zip(&tr.data) {
                *o = f(*o, *b);
            }
        }
        Ok(self.push(out, op(ai, ri), &[ai, ri]))
    }

    /// Adds a `1 x c` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var, NnError> {
        self.row_broadcast("add_row", a, row, |x, y| x + y, Op::AddRow)
    }

    /// Multiplies every row of `a` elementwise by a `1 x c` row.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Result<Var, NnError> {
        self.row_broadcast("mul_row", a, row, |x, y| x * y, Op::MulRow)
    }

    /// Adds an `r x 1` column to every column of `a`.
    pub fn add_col(&mut self, a: Var, col: Var) -> Result<Var, NnError> {
        let (ai, ci) = (self.idx(a)?, self.idx(col)?);
        let (ta, tc) = (self.val(ai), self.val(ci));
        if tc.cols != 1 || tc.rows != ta.rows {
            return Err(shape_err("add_col", ta.shape(), tc.shape()));
        }
        let mut out = ta.clone();
        for r in 0..out.rows {
            let c = tc.data[r];
            for o in out.row_mut(r) {
                *o = *o + c;
            }
        }
        Ok(self.push(out, Op::AddCol(ai, ci), &[ai, ci]))
    }

    pub fn scale(&mut self, a: Var, s: T) -> Result<Var, NnError> {
        let ai = self.idx(a)?;
        let ta = self.val(ai);
        let out = Tensor::from_vec(ta.rows, ta.cols, ta.data.iter().map(|v| *v * s).collect());
        Ok(self.push(out, Op::Scale(ai, s), &[ai]))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, NnError> {
        let idx: Vec<usize> = parts.iter().map(|&v| self.idx(v)).collect::<Result<_, _>>()?;
        let first = *idx.first().ok_or(NnError::EmptySequence)?;
        let rows = self.val(first).rows;
        for &i in &idx {
            if self.val(i).rows != rows {
                return Err(shape_err("concat_cols", self.val(first).shape(), self.val(i).shape()));
            }
        }
        let cols: usize = idx.iter().map(|&i| self.val(i).cols).sum();
        let mut out = Tensor::zeros(rows, cols);
        for r in 0..rows {
            let mut off = 0;
            for &i in &idx {
                let t = self.val(i);
                out.row_mut(r)[off..off + t.cols].copy_from_slice(t.row(r));
                off += t.cols;
            }
        }
        Ok(self.push(out, Op::ConcatCols(idx.clone()), &idx))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, NnError> {
        let idx: Vec<usize> = parts.iter().map(|&v| self.idx(v)).collect::<Result<_, _>>()?;
        let first = *idx.first().ok_or(NnError::EmptySequence)?;
        let cols = self.val(first).cols;
        let mut data = Vec::new();
        for &i in &idx {
            let t = self.val(i);
            if t.cols != cols {
                return Err(shape_err("concat_rows", self.val(first).shape(), t.shape()));
            }
            data.extend_from_slice(&t.data);
        }
        let rows = data.len() / cols.max(1);
        let out = Tensor::from_vec(rows, cols, data);
        Ok(self.push(out, Op::ConcatRows(idx.clone()), &idx))
    }

    /// Columns `start .. start + width` of `a`.
    pub fn slice_cols(&mut self, a: Var, start: usize, width: usize) -> Result<Var, NnError> {
        let ai = self.idx(a)?;
        let ta = self.val(ai);
        if start + width > ta.cols {
            return Err(shape_err("slice_cols", ta.shape(), [start, width]));
        }
        let mut out = Tensor::zeros(ta.rows, width);
        for r in 0..ta.rows {
            out.row_mut(r).copy_from_slice(&ta.row(r)[start..start + width]);
        }
        Ok(self.push(out, Op::SliceCols { a: ai, start }, &[ai]))
    }

    /// Splits `a` column-wise into consecutive blocks of the given widths.
    pub fn split_cols(&mut self, a: Var, widths: &[usize]) -> Result<Vec<Var>, NnError> {
        let mut start = 0;
        let mut out = Vec::with_capacity(widths.len());
        for &w in widths {
            out.push(self.slice_cols(a, start, w)?);
            start += w;
        }
        Ok(out)
    }

    /// Rows `start .. start + count` of `a`.
    pub fn slice_rows(&mut self, a: Var, start: usize, count: usize) -> Result<Var, NnError> {
        let ai = self.idx(a)?;
        let ta = self.val(ai);
        if start + count > ta.rows {
            return Err(shape_err("slice_rows", ta.shape(), [start, count]));
        }
        let out = Tensor::from_vec(
            count,
            ta.cols,
            ta.data[start * ta.cols..(start + count) * ta.cols].to_vec(),
        );
        Ok(self.push(out, Op::SliceRows { a: ai, start }, &[ai]))
    }

    /// Row gather; as an embedding lookup `a` is the table.
    pub fn select_rows(&mut self, a: Var, rows: &[usize]) -> Result<Var, NnError> {
        let ai = self.idx(a)?;
        let ta = self.val(ai);
        let mut data = Vec::with_capacity(rows.len() * ta.cols);
        for &r in rows {
            if r >= ta.rows {
                return Err(shape_err("select_rows", ta.shape(), [r, 0]));
            }
            data.extend_from_slice(ta.row(r));
        }
        let out = Tensor::from_vec(rows.len(), ta.cols, data);
        Ok(self.push(out, Op::SelectRows { a: ai, idx: rows.into() }, &[ai]))
    }

    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var, NnError> {
        self.select_rows(table, ids)
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var, NnError> {
        let ai = self.idx(a)?;
        let ta = self.val(ai);
        let mut out = Tensor::zeros(ta.cols, ta.rows);
        for r in 0..ta.rows {
            for c in 0..ta.cols {
                out.data[c * ta.rows + r] = ta.data[r * ta.cols + c];
            }
        }
        Ok(self.push(out, Op::Transpose(ai), &[ai]))
    }

    fn unary(&mut self, a: Var, f: impl Fn(T) -> T, op: impl FnOnce(usize) -> Op<T>) -> Result<Var, NnError> {
        let ai = self.idx(a)?;
        let ta = self.val(ai);
        let out = Tensor::from_vec(ta.rows, ta.cols, ta.data.iter().map(|v| f(*v)).collect());
        Ok(self.push(out, op(ai), &[ai]))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var, NnError> {
        self.unary(a, T::tanh, Op::Tanh)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var, NnError> {
        self.unary(a, |x| T::one() / (T::one() + (-x).exp()), Op::Sigmoid)
    }

    /// Softmax over each row.
    pub fn row_softmax(&mut self, a: Var) -> Result<Var, NnError> {
        let ai = self.idx(a)?;
        let mut out = self.val(ai).clone();
        for r in 0..out.rows {
            softmax_in_place(out.row_mut(r));
        }
        Ok(self.push(out, Op::RowSoftmax(ai), &[ai]))
    }

    pub fn log_softmax(&mut self, a: Var) -> Result<Var, NnError> {
        let ai = self.idx(a)?;
        let mut out = self.val(ai).clone();
        for r in 0..out.rows {
            let row = out.row_mut(r);
            let lse = log_sum_exp(row);
            for v in row.iter_mut() {
                *v = *v - lse;
            }
        }
        Ok(self.push(out, Op::LogSoftmax(ai), &[ai]))
    }

    /// `out[i][j] = a[i][index[i * c + j]]` for an `r x c` index table.
    pub fn gather_cols(&mut self, a: Var, index: Rc<[usize]>, out_cols: usize) -> Result<Var, NnError> {
        let ai = self.idx(a)?;
        let ta = self.val(ai);
        if index.len() != ta.rows * out_cols || index.iter().any(|&c| c >= ta.cols) {
            return Err(shape_err("gather_cols", ta.shape(), [ta.rows, out_cols]));
        }
        let mut out = Tensor::zeros(ta.rows, out_cols);
        for r in 0..ta.rows {
            for j in 0..out_cols {
                out.data[r * out_cols + j] = ta.data[r * ta.cols + index[r * out_cols + j]];
            }
        }
        Ok(self.push(out, Op::GatherCols { a: ai, idx: index }, &[ai]))
    }

    /// Adjoint of [`Graph::gather_cols`]: `out[i][index[i][j]] += a[i][j]`.
    pub fn scatter_cols(&mut self, a: Var, index: Rc<[usize]>, out_cols: usize) -> Result<Var, NnError> {
        let ai = self.idx(a)?;
        let ta = self.val(ai);
        if index.len() != ta.rows * ta.cols || index.iter().any(|&c| c >= out_cols) {
            return Err(shape_err("scatter_cols", ta.shape(), [ta.rows, out_cols]));
        }
        let mut out = Tensor::zeros(ta.rows, out_cols);
        for r in 0..ta.rows {
            for j in 0..ta.cols {
                let c = index[r * ta.cols + j];
                out.data[r * out_cols + c] = out.data[r * out_cols + c] + ta.data[r * ta.cols + j];
            }
        }
        Ok(self.push(out, Op::ScatterCols { a: ai, idx: index }, &[ai]))
    }

    /// Inverted dropout: survivors are scaled by `1 / keep`. Identity when
    /// the graph is not training or `keep >= 1`.
    pub fn dropout(&mut self, a: Var, keep: f64) -> Result<Var, NnError> {
        let ai = self.idx(a)?;
        if !self.training || keep >= 1.0 {
            return Ok(a);
        }
        if keep <= 0.0 {
            return Err(NnError::Config(format!("dropout keep probability {keep}")));
        }
        let n = self.val(ai).len();
        let scale = T::of(1.0 / keep);
        let mask: Vec<T> = (0..n)
            .map(|_| if self.rng.gen::<f64>() < keep { scale } else { T::zero() })
            .collect();
        let ta = self.val(ai);
        let out = Tensor::from_vec(ta.rows, ta.cols, ta.data.iter().zip(&mask).map(|(x, m)| *x * *m).collect());
        Ok(self.push(out, Op::Dropout { a: ai, mask }, &[ai]))
    }

    /// Per-row normalization to zero mean and unit variance (no affine).
    pub fn layer_norm(&mut self, a: Var) -> Result<Var, NnError> {
        let ai = self.idx(a)?;
        let mut out = self.val(ai).clone();
        let c = T::of(out.cols as f64);
        let mut rstd = Vec::with_capacity(out.rows);
        for r in 0..out.rows {
            let row = out.row_mut(r);
            let mean = row.iter().copied().sum::<T>() / c;
            let var = row.iter().map(|v| (*v - mean) * (*v - mean)).sum::<T>() / c;
            let rs = T::one() / (var + T::of(LAYER_NORM_EPS)).sqrt();
            for v in row.iter_mut() {
                *v = (*v - mean) * rs;
            }
            rstd.push(rs);
        }
        Ok(self.push(out, Op::LayerNorm { a: ai, rstd }, &[ai]))
    }

    /// Summed negative log-likelihood of `targets[i]` under the softmax of
    /// row `i`; returns a `1 x 1` tensor.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var, NnError> {
        let ai = self.idx(logits)?;
        let ta = self.val(ai);
        if targets.len() != ta.rows || targets.iter().any(|&t| t >= ta.cols) {
            return Err(shape_err("cross_entropy", ta.shape(), [targets.len(), 1]));
        }
        let mut probs = ta.clone();
        let mut loss = T::zero();
        for (r, &t) in targets.iter().enumerate() {
            let row = probs.row_mut(r);
            let (max, tail) = log_sum_exp_parts(row);
            loss = loss + ((max - row[t]) + tail);
            let lse = max + tail;
            for v in row.iter_mut() {
                *v = (*v - lse).exp();
            }
        }
        let op = Op::CrossEntropy { a: ai, targets: targets.to_vec(), probs };
        Ok(self.push(Tensor::scalar(loss), op, &[ai]))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var, NnError> {
        let ai = self.idx(a)?;
        let s = self.val(ai).data.iter().copied().sum::<T>();
        Ok(self.push(Tensor::scalar(s), Op::Sum(ai), &[ai]))
    }

    /// Blockwise row dot product: `a` is `r x (L·q)`, `b` is `r x q`, and
    /// `out[i][l] = Σ_k a[i][l·q + k] · b[i][k]`.
    pub fn chunk_dot(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        let (ai, bi) = (self.idx(a)?, self.idx(b)?);
        let (ta, tb) = (self.val(ai), self.val(bi));
        if ta.rows != tb.rows || tb.cols == 0 || ta.cols % tb.cols != 0 {
            return Err(shape_err("chunk_dot", ta.shape(), tb.shape()));
        }
        let q = tb.cols;
        let l = ta.cols / q;
        let mut out = Tensor::zeros(ta.rows, l);
        for r in 0..ta.rows {
            let ar = ta.row(r);
            let br = tb.row(r);
            for c in 0..l {
                out.data[r * l + c] = ar[c * q..(c + 1) * q].iter().zip(br).map(|(x, y)| *x * *y).sum();
            }
        }
        Ok(self.push(out, Op::ChunkDot { a: ai, b: bi }, &[ai, bi]))
    }

    /// Reverse sweep from a `1 x 1` loss. Every parameter leaf created in
    /// this graph receives a (possibly zero) gradient. A graph supports a
    /// single backward pass.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients<T>, NnError> {
        let li = self.idx(loss)?;
        if self.backward_done {
            return Err(NnError::BackwardTwice);
        }
        if self.val(li).len() != 1 {
            return Err(NnError::NonScalarLoss(self.val(li).shape()));
        }
        self.backward_done = true;

        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[li] = Some(Tensor::scalar(T::one()));
        let mut param_grads: Vec<Option<Tensor<T>>> = (0..self.params.len()).map(|_| None).collect();
        for (&pid, _) in self.param_nodes.iter() {
            let s = self.params.value(pid).shape();
            param_grads[pid.0] = Some(Tensor::zeros(s[0], s[1]));
        }

        for i in (0..=li).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            self.backprop_node(i, &g, &mut grads, &mut param_grads);
        }
        Ok(Gradients { grads: param_grads })
    }

    fn grad_buf<'g>(&self, grads: &'g mut [Option<Tensor<T>>], i: usize) -> Option<&'g mut Tensor<T>> {
        if !self.nodes[i].requires_grad {
            return None;
        }
        let s = self.val(i).shape();
        Some(grads[i].get_or_insert_with(|| Tensor::zeros(s[0], s[1])))
    }

    fn backprop_node(
        &self,
        i: usize,
        g: &Tensor<T>,
        grads: &mut [Option<Tensor<T>>],
        param_grads: &mut [Option<Tensor<T>>],
    ) {
        let y = self.val(i);
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::Param(pid) => {
                if let Some(buf) = param_grads[pid.0].as_mut() {
                    add_into(&mut buf.data, &g.data);
                }
            }
            &Op::MatMul { a, b, a_t, b_t } => {
                let (ta, tb) = (self.val(a), self.val(b));
                let (m, n) = (g.rows, g.cols);
                let k = if a_t { ta.rows } else { ta.cols };
                if let Some(ga) = self.grad_buf(grads, a) {
                    if a_t {
                        T::gemm(k, n, m, &tb.data, b_t, &g.data, true, &mut ga.data, T::one());
                    } else {
                        T::gemm(m, n, k, &g.data, false, &tb.data, !b_t, &mut ga.data, T::one());
                    }
                }
                if let Some(gb) = self.grad_buf(grads, b) {
                    if b_t {
                        T::gemm(n, m, k, &g.data, true, &ta.data, a_t, &mut gb.data, T::one());
                    } else {
                        T::gemm(k, m, n, &ta.data, !a_t, &g.data, false, &mut gb.data, T::one());
                    }
                }
            }
            &Op::Add(a, b) => {
                for x in [a, b] {
                    if let Some(gx) = self.grad_buf(grads, x) {
                        add_into(&mut gx.data, &g.data);
                    }
                }
            }
            &Op::AddRow(a, row) => {
                if let Some(ga) = self.grad_buf(grads, a) {
                    add_into(&mut ga.data, &g.data);
                }
                if let Some(gr) = self.grad_buf(grads, row) {
                    for r in 0..g.rows {
                        add_into(&mut gr.data, g.row(r));
                    }
                }
            }
            &Op::AddCol(a, col) => {
                if let Some(ga) = self.grad_buf(grads, a) {
                    add_into(&mut ga.data, &g.data);
                }
                if let Some(gc) = self.grad_buf(grads, col) {
                    for r in 0..g.rows {
                        gc.data[r] = gc.data[r] + g.row(r).iter().copied().sum::<T>();
                    }
                }
            }
            &Op::Mul(a, b) => {
                let (ta, tb) = (self.val(a), self.val(b));
                if let Some(ga) = self.grad_buf(grads, a) {
                    for ((d, gv), bv) in ga.data.iter_mut().zip(&g.data).zip(&tb.data) {
                        *d = *d + *gv * *bv;
                    }
                }
                if let Some(gb) = self.grad_buf(grads, b) {
                    for ((d, gv), av) in gb.data.iter_mut().zip(&g.data).zip(&ta.data) {
                        *d = *d + *gv * *av;
                    }
                }
            }
            &Op::MulRow(a, row) => {
                let (ta, tr) = (self.val(a), self.val(row));
                if let Some(ga) = self.grad_buf(grads, a) {
                    for r in 0..g.rows {
                        for ((d, gv), rv) in ga.row_mut(r).iter_mut().zip(g.row(r)).zip(&tr.data) {
                            *d = *d + *gv * *rv;
                        }
                    }
                }
                if let Some(gr) = self.grad_buf(grads, row) {
                    for r in 0..g.rows {
                        for ((d, gv), av) in gr.data.iter_mut().zip(g.row(r)).zip(ta.row(r)) {
                            *d = *d + *gv * *av;
                        }
                    }
                }
            }
            &Op::Scale(a, s) => {
                if let Some(ga) = self.grad_buf(grads, a) {
                    for (d, gv) in ga.data.iter_mut().zip(&g.data) {
                        *d = *d + *gv * s;
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for &p in parts {
                    let w = self.val(p).cols;
                    if let Some(gp) = self.grad_buf(grads, p) {
                        for r in 0..g.rows {
                            add_into(gp.row_mut(r), &g.row(r)[off..off + w]);
                        }
                    }
                    off += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let len = self.val(p).len();
                    if let Some(gp) = self.grad_buf(grads, p) {
                        add_into(&mut gp.data, &g.data[off..off + len]);
                    }
                    off += len;
                }
            }
            &Op::SliceCols { a, start } => {
                if let Some(ga) = self.grad_buf(grads, a) {
                    for r in 0..g.rows {
                        add_into(&mut ga.row_mut(r)[start..start + g.cols], g.row(r));
                    }
                }
            }
            &Op::SliceRows { a, start } => {
                if let Some(ga) = self.grad_buf(grads, a) {
                    let c = ga.cols;
                    add_into(&mut ga.data[start * c..(start + g.rows) * c], &g.data);
                }
            }
            Op::SelectRows { a, idx } => {
                if let Some(ga) = self.grad_buf(grads, *a) {
                    for (r, &src) in idx.iter().enumerate() {
                        add_into(ga.row_mut(src), g.row(r));
                    }
                }
            }
            &Op::Transpose(a) => {
                if let Some(ga) = self.grad_buf(grads, a) {
                    // g is (cols x rows) of a
                    for r in 0..g.rows {
                        for c in 0..g.cols {
                            let d = &mut ga.data[c * g.rows + r];
                            *d = *d + g.data[r * g.cols + c];
                        }
                    }
                }
            }
            &Op::Tanh(a) => {
                if let Some(ga) = self.grad_buf(grads, a) {
                    for ((d, gv), yv) in ga.data.iter_mut().zip(&g.data).zip(&y.data) {
                        *d = *d + *gv * (T::one() - *yv * *yv);
                    }
                }
            }
            &Op::Sigmoid(a) => {
                if let Some(ga) = self.grad_buf(grads, a) {
                    for ((d, gv), yv) in ga.data.iter_mut().zip(&g.data).zip(&y.data) {
                        *d = *d + *gv * *yv * (T::one() - *yv);
                    }
                }
            }
            &Op::RowSoftmax(a) => {
                if let Some(ga) = self.grad_buf(grads, a) {
                    for r in 0..g.rows {
                        let (gr, yr) = (g.row(r), y.row(r));
                        let dot: T = gr.iter().zip(yr).map(|(x, z)| *x * *z).sum();
                        for ((d, gv), yv) in ga.row_mut(r).iter_mut().zip(gr).zip(yr) {
                            *d = *d + *yv * (*gv - dot);
                        }
                    }
                }
            }
            &Op::LogSoftmax(a) => {
                if let Some(ga) = self.grad_buf(grads, a) {
                    for r in 0..g.rows {
                        let (gr, yr) = (g.row(r), y.row(r));
                        let total: T = gr.iter().copied().sum();
                        for ((d, gv), yv) in ga.row_mut(r).iter_mut().zip(gr).zip(yr) {
                            *d = *d + *gv - yv.exp() * total;
                        }
                    }
                }
            }
            Op::GatherCols { a, idx } => {
                if let Some(ga) = self.grad_buf(grads, *a) {
                    let ac = ga.cols;
                    for r in 0..g.rows {
                        for j in 0..g.cols {
                            let d = &mut ga.data[r * ac + idx[r * g.cols + j]];
                            *d = *d + g.data[r * g.cols + j];
                        }
                    }
                }
            }
            Op::ScatterCols { a, idx } => {
                if let Some(ga) = self.grad_buf(grads, *a) {
                    let ac = ga.cols;
                    for r in 0..ga.rows {
                        for j in 0..ac {
                            let d = &mut ga.data[r * ac + j];
                            *d = *d + g.data[r * g.cols + idx[r * ac + j]];
                        }
                    }
                }
            }
            Op::Dropout { a, mask } => {
                if let Some(ga) = self.grad_buf(grads, *a) {
                    for ((d, gv), m) in ga.data.iter_mut().zip(&g.data).zip(mask) {
                        *d = *d + *gv * *m;
                    }
                }
            }
            Op::LayerNorm { a, rstd } => {
                if let Some(ga) = self.grad_buf(grads, *a) {
                    let c = T::of(g.cols as f64);
                    for r in 0..g.rows {
                        let (gr, yr) = (g.row(r), y.row(r));
                        let mean_g = gr.iter().copied().sum::<T>() / c;
                        let mean_gy = gr.iter().zip(yr).map(|(x, z)| *x * *z).sum::<T>() / c;
                        for ((d, gv), yv) in ga.row_mut(r).iter_mut().zip(gr).zip(yr) {
                            *d = *d + rstd[r] * (*gv - mean_g - *yv * mean_gy);
                        }
                    }
                }
            }
            Op::CrossEntropy { a, targets, probs } => {
                let scale = g.data[0];
                if let Some(ga) = self.grad_buf(grads, *a) {
                    for (r, &t) in targets.iter().enumerate() {
                        for (c, (d, p)) in ga.row_mut(r).iter_mut().zip(probs.row(r)).enumerate() {
                            let target = if c == t { T::one() } else { T::zero() };
                            *d = *d + scale * (*p - target);
                        }
                    }
                }
            }
            &Op::Sum(a) => {
                let s = g.data[0];
                if let Some(ga) = self.grad_buf(grads, a) {
                    for d in ga.data.iter_mut() {
                        *d = *d + s;
                    }
                }
            }
            &Op::ChunkDot { a, b } => {
                let (ta, tb) = (self.val(a), self.val(b));
                let q = tb.cols;
                let l = g.cols;
                if let Some(ga) = self.grad_buf(grads, a) {
                    for r in 0..g.rows {
                        for c in 0..l {
                            let gv = g.data[r * l + c];
                            for (d, bv) in ga.row_mut(r)[c * q..(c + 1) * q].iter_mut().zip(tb.row(r)) {
                                *d = *d + gv * *bv;
                            }
                        }
                    }
                }
                if let Some(gb) = self.grad_buf(grads, b) {
                    for r in 0..g.rows {
                        for c in 0..l {
                            let gv = g.data[r * l + c];
                            let ar = &ta.row(r)[c * q..(c + 1) * q];
                            for (d, av) in gb.row_mut(r).iter_mut().zip(ar) {
                                *d = *d + gv * *av;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// `(max, ln(sum(exp(v - max))))`, the second part through `ln_1p` of the
/// non-maximal terms so that near-certain rows keep their precision.
fn log_sum_exp_parts<T: Real>(row: &[T]) -> (T, T) {
    if row.is_empty() {
        return (T::neg_infinity(), T::zero());
    }
    let mut arg = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[arg] {
            arg = i;
        }
    }
    let max = row[arg];
    if !max.is_finite() {
        return (max, T::zero());
    }
    let rest = row
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != arg)
        .map(|(_, v)| (*v - max).exp())
        .fold(T::zero(), |a, b| a + b);
    (max, rest.ln_1p())
}

fn log_sum_exp<T: Real>(row: &[T]) -> T {
    let (max, tail) = log_sum_exp_parts(row);
    max + tail
}

fn softmax_in_place<T: Real>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut total = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total = total + *v;
    }
    for v in row.iter_mut() {
        *v = *v / total;
    }
}
