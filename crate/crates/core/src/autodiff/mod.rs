//! Reverse-mode automatic differentiation over dense tensors.
//!
//! A [`Graph`] is a tape: every operation appends a node holding its output
//! value, so node order is already a topological order and [`Graph::backward`]
//! walks it once in reverse. Nodes are never mutated after creation.

mod gradcheck;
pub mod kernels;

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::math;
use crate::nn::{ParamId, ParamStore};
use crate::tensor::Tensor;
use crate::{Error, Result};

pub use gradcheck::{grad_check, grad_check_params, GradCheckError};

const LAYER_NORM_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_A: f64 = 0.044_715;

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    AddRow(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Sigmoid(Var),
    Tanh(Var),
    Gelu(Var),
    Softplus(Var),
    Exp(Var),
    Log(Var),
    Abs(Var),
    ClampMin(Var, f64),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        rstd: Vec<f64>,
    },
    SoftmaxRows(Var),
    Attention {
        qkv: Var,
        seq_len: usize,
        heads: usize,
        probs: Vec<f64>,
    },
    Im2Col {
        x: Var,
        seq_len: usize,
        kernel: usize,
    },
    Gather {
        x: Var,
        index: Vec<usize>,
    },
    SegmentSum {
        x: Var,
        segment: Vec<usize>,
    },
    SegmentSoftmax {
        x: Var,
        segment: Vec<usize>,
    },
    ScaleRows(Var, Var),
    ConcatCols(Vec<Var>),
    SliceCols {
        x: Var,
        start: usize,
    },
    Reshape(Var),
    Sum(Var),
    Dropout {
        x: Var,
        mask: Vec<f64>,
    },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::AddRow(..) => "add_row",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Div(..) => "div",
            Op::Scale(..) => "scale",
            Op::AddScalar(..) => "add_scalar",
            Op::Sigmoid(..) => "sigmoid",
            Op::Tanh(..) => "tanh",
            Op::Gelu(..) => "gelu",
            Op::Softplus(..) => "softplus",
            Op::Exp(..) => "exp",
            Op::Log(..) => "log",
            Op::Abs(..) => "abs",
            Op::ClampMin(..) => "clamp_min",
            Op::LayerNorm { .. } => "layer_norm",
            Op::SoftmaxRows(..) => "softmax",
            Op::Attention { .. } => "attention",
            Op::Im2Col { .. } => "im2col",
            Op::Gather { .. } => "gather",
            Op::SegmentSum { .. } => "segment_sum",
            Op::SegmentSoftmax { .. } => "segment_softmax",
            Op::ScaleRows(..) => "scale_rows",
            Op::ConcatCols(..) => "concat_cols",
            Op::SliceCols { .. } => "slice_cols",
            Op::Reshape(..) => "reshape",
            Op::Sum(..) => "sum",
            Op::Dropout { .. } => "dropout",
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Accumulated gradients from one backward pass, indexed by node.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }
}

/// A compute tape. Parameter leaves are deduplicated per [`ParamId`].
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    param_vars: Vec<Option<Var>>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn op_name(&self, v: Var) -> &'static str {
        self.nodes[v.0].op.name()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn data(&self, v: Var) -> &[f64] {
        self.nodes[v.0].value.data()
    }

    /// Inserts a tensor; it is differentiated iff `tensor.requires_grad()`.
    pub fn leaf(&mut self, tensor: Tensor) -> Var {
        let rg = tensor.requires_grad();
        self.push(tensor, Op::Leaf, rg)
    }

    pub fn constant(&mut self, tensor: Tensor) -> Var {
        self.push(tensor, Op::Leaf, false)
    }

    pub fn variable(&mut self, tensor: Tensor) -> Var {
        self.push(tensor, Op::Leaf, true)
    }

    /// Leaf for a learnable parameter; repeated calls return the same node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        let idx = id.index();
        if idx >= self.param_vars.len() {
            self.param_vars.resize(idx + 1, None);
        }
        if let Some(v) = self.param_vars[idx] {
            return v;
        }
        let v = self.push(store.get(id).clone(), Op::Leaf, true);
        self.param_vars[idx] = Some(v);
        v
    }

    /// Parameters that entered this graph, with their nodes.
    pub fn params(&self) -> impl Iterator<Item = (ParamId, Var)> + '_ {
        self.param_vars
            .iter()
            .enumerate()
            .filter_map(|(i, v)| v.map(|v| (ParamId::from_index(i), v)))
    }

    fn unary(&mut self, x: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let t = &self.nodes[x.0].value;
        let data = t.data().iter().map(|&v| f(v)).collect();
        let value = Tensor::new(t.shape(), data).expect("same shape");
        let rg = self.rg(x);
        self.push(value, op, rg)
    }

    fn binary_same(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        op: Op,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Var> {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if ta.shape() != tb.shape() {
            return Err(Error::shape(name, ta.shape(), tb.shape()));
        }
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let value = Tensor::new(ta.shape(), data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, op, rg))
    }

    /// `[m,k] x [k,n] -> [m,n]`; the left operand may carry extra leading
    /// dimensions, which are flattened into rows.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if tb.shape().len() != 2 || ta.shape().is_empty() || ta.cols() != tb.shape()[0] {
            return Err(Error::shape("matmul", ta.shape(), tb.shape()));
        }
        let (m, k, n) = (ta.rows(), ta.cols(), tb.shape()[1]);
        let mut out = vec![0.0; m * n];
        kernels::matmul(ta.data(), tb.data(), m, k, n, &mut out);
        let mut shape = ta.shape().to_vec();
        *shape.last_mut().unwrap() = n;
        let value = Tensor::new(&shape, out)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::MatMul(a, b), rg))
    }

    /// Adds a row vector `b[n]` to every row of `x[.., n]`.
    pub fn add_row(&mut self, x: Var, b: Var) -> Result<Var> {
        let (tx, tb) = (&self.nodes[x.0].value, &self.nodes[b.0].value);
        if tb.numel() != tx.cols() {
            return Err(Error::shape("add_row", tx.shape(), tb.shape()));
        }
        let n = tx.cols();
        let mut data = tx.data().to_vec();
        for row in data.chunks_mut(n.max(1)) {
            for (v, &bv) in row.iter_mut().zip(tb.data()) {
                *v += bv;
            }
        }
        let value = Tensor::new(tx.shape(), data)?;
        let rg = self.rg(x) || self.rg(b);
        Ok(self.push(value, Op::AddRow(x, b), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same("add", a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same("sub", a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same("mul", a, b, Op::Mul(a, b), |x, y| x * y)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same("div", a, b, Op::Div(a, b), |x, y| x / y)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        self.unary(x, Op::Scale(x, c), |v| v * c)
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        self.unary(x, Op::AddScalar(x), |v| v + c)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, Op::Sigmoid(x), math::sigmoid)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, Op::Tanh(x), math::tanh)
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, x: Var) -> Var {
        self.unary(x, Op::Gelu(x), |v| {
            0.5 * v * (1.0 + math::tanh(GELU_C * (v + GELU_A * v * v * v)))
        })
    }

    pub fn softplus(&mut self, x: Var) -> Var {
        self.unary(x, Op::Softplus(x), math::softplus)
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, Op::Exp(x), math::exp)
    }

    pub fn log(&mut self, x: Var) -> Var {
        self.unary(x, Op::Log(x), math::ln)
    }

    pub fn abs(&mut self, x: Var) -> Var {
        self.unary(x, Op::Abs(x), math::abs)
    }

    /// `max(x, floor)`; the gradient is passed only where `x > floor`.
    pub fn clamp_min(&mut self, x: Var, floor: f64) -> Var {
        self.unary(x, Op::ClampMin(x, floor), |v| v.max(floor))
    }

    /// Layer normalization over the last dimension with affine `gamma`, `beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let tx = &self.nodes[x.0].value;
        let n = tx.cols();
        let (tg, tb) = (&self.nodes[gamma.0].value, &self.nodes[beta.0].value);
        if tg.numel() != n || tb.numel() != n {
            return Err(Error::shape("layer_norm", tx.shape(), tg.shape()));
        }
        let rows = tx.rows();
        let mut out = vec![0.0; tx.numel()];
        let mut rstd = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = &tx.data()[r * n..(r + 1) * n];
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let s = 1.0 / math::sqrt(var + LAYER_NORM_EPS);
            rstd.push(s);
            for (j, o) in out[r * n..(r + 1) * n].iter_mut().enumerate() {
                *o = (row[j] - mean) * s * tg.data()[j] + tb.data()[j];
            }
        }
        let value = Tensor::new(tx.shape(), out)?;
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        Ok(self.push(
            value,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                rstd,
            },
            rg,
        ))
    }

    /// Softmax along the last dimension.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let tx = &self.nodes[x.0].value;
        let n = tx.cols();
        if n == 0 || tx.numel() == 0 {
            return Err(Error::Empty("softmax axis"));
        }
        let mut data = tx.data().to_vec();
        kernels::softmax_rows(&mut data, n);
        let value = Tensor::new(tx.shape(), data)?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::SoftmaxRows(x), rg))
    }

    /// Multi-head scaled dot-product self-attention.
    ///
    /// `qkv` is `[B*S, 3D]` holding queries, keys and values side by side for
    /// `B` independent sequences of length `seq_len`; the result is `[B*S, D]`.
    /// Attention never mixes rows of different sequences.
    pub fn attention(&mut self, qkv: Var, seq_len: usize, heads: usize) -> Result<Var> {
        let t = &self.nodes[qkv.0].value;
        let cols = t.cols();
        if heads == 0 || !cols.is_multiple_of(3) || !(cols / 3).is_multiple_of(heads) {
            return Err(Error::invalid(
                "attention heads",
                alloc::format!("width {} not divisible into 3 x {heads} heads", cols),
            ));
        }
        if seq_len == 0 || !t.rows().is_multiple_of(seq_len) {
            return Err(Error::invalid(
                "attention sequence length",
                alloc::format!("{} rows not divisible by {seq_len}", t.rows()),
            ));
        }
        let d = cols / 3;
        let dh = d / heads;
        let batches = t.rows() / seq_len;
        let scale = 1.0 / math::sqrt(dh as f64);
        let src = t.data();
        let mut out = vec![0.0; t.rows() * d];
        let mut probs = vec![0.0; batches * heads * seq_len * seq_len];
        for b in 0..batches {
            for h in 0..heads {
                let pbase = (b * heads + h) * seq_len * seq_len;
                for i in 0..seq_len {
                    let q = &src[(b * seq_len + i) * cols + h * dh..][..dh];
                    let prow = &mut probs[pbase + i * seq_len..pbase + (i + 1) * seq_len];
                    for (j, p) in prow.iter_mut().enumerate() {
                        let k = &src[(b * seq_len + j) * cols + d + h * dh..][..dh];
                        *p = q.iter().zip(k).map(|(a, c)| a * c).sum::<f64>() * scale;
                    }
                    kernels::softmax_in_place(prow);
                    let orow = &mut out[(b * seq_len + i) * d + h * dh..][..dh];
                    for (j, &p) in prow.iter().enumerate() {
                        let v = &src[(b * seq_len + j) * cols + 2 * d + h * dh..][..dh];
                        for (o, &vv) in orow.iter_mut().zip(v) {
                            *o += p * vv;
                        }
                    }
                }
            }
        }
        let mut shape = t.shape().to_vec();
        *shape.last_mut().unwrap() = d;
        let value = Tensor::new(&shape, out)?;
        let rg = self.rg(qkv);
        Ok(self.push(
            value,
            Op::Attention {
                qkv,
                seq_len,
                heads,
                probs,
            },
            rg,
        ))
    }

    /// Attention probabilities `[B, heads, S, S]` saved by an attention node.
    pub fn attention_probs(&self, v: Var) -> Option<&[f64]> {
        match &self.nodes[v.0].op {
            Op::Attention { probs, .. } => Some(probs),
            _ => None,
        }
    }

    /// Unfolds `[B*S, C]` into `[B*S, kernel*C]` windows centred on each
    /// step, zero padded at sequence boundaries. `kernel` must be odd.
    pub fn im2col(&mut self, x: Var, seq_len: usize, kernel: usize) -> Result<Var> {
        let t = &self.nodes[x.0].value;
        if kernel.is_multiple_of(2) || seq_len == 0 || !t.rows().is_multiple_of(seq_len) {
            return Err(Error::invalid(
                "im2col",
                alloc::format!("kernel {kernel}, seq_len {seq_len}, rows {}", t.rows()),
            ));
        }
        let c = t.cols();
        let rows = t.rows();
        let pad = kernel / 2;
        let mut out = vec![0.0; rows * kernel * c];
        for r in 0..rows {
            let (b, s) = (r / seq_len, r % seq_len);
            for kk in 0..kernel {
                let src = s as isize + kk as isize - pad as isize;
                if src < 0 || src >= seq_len as isize {
                    continue;
                }
                let src_row = b * seq_len + src as usize;
                out[r * kernel * c + kk * c..][..c]
                    .copy_from_slice(&t.data()[src_row * c..(src_row + 1) * c]);
            }
        }
        let value = Tensor::new(&[rows, kernel * c], out)?;
        let rg = self.rg(x);
        Ok(self.push(
            value,
            Op::Im2Col {
                x,
                seq_len,
                kernel,
            },
            rg,
        ))
    }

    /// Selects rows of a `[m, n]` view: `out[r] = x[index[r]]`.
    pub fn gather_rows(&mut self, x: Var, index: Vec<usize>) -> Result<Var> {
        let t = &self.nodes[x.0].value;
        let (m, n) = (t.rows(), t.cols());
        if let Some(&bad) = index.iter().find(|&&i| i >= m) {
            return Err(Error::invalid(
                "gather index",
                alloc::format!("{bad} out of {m} rows"),
            ));
        }
        let mut out = Vec::with_capacity(index.len() * n);
        for &i in &index {
            out.extend_from_slice(&t.data()[i * n..(i + 1) * n]);
        }
        let value = Tensor::new(&[index.len(), n], out)?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::Gather { x, index }, rg))
    }

    /// Sums rows of `[P, n]` into `segments` output rows; `segment[p]` names
    /// the destination of row `p`. Rows are accumulated in index order and
    /// segments with no rows are zero.
    pub fn segment_sum(&mut self, x: Var, segment: Vec<usize>, segments: usize) -> Result<Var> {
        let t = &self.nodes[x.0].value;
        let n = t.cols();
        if segment.len() != t.rows() || segment.iter().any(|&s| s >= segments) {
            return Err(Error::invalid(
                "segment ids",
                alloc::format!("{} ids for {} rows, {segments} segments", segment.len(), t.rows()),
            ));
        }
        let mut out = vec![0.0; segments * n];
        for (p, &s) in segment.iter().enumerate() {
            let src = &t.data()[p * n..(p + 1) * n];
            for (o, &v) in out[s * n..(s + 1) * n].iter_mut().zip(src) {
                *o += v;
            }
        }
        let value = Tensor::new(&[segments, n], out)?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::SegmentSum { x, segment }, rg))
    }

    /// Softmax of a column `[P, 1]` within groups sharing a segment id.
    pub fn segment_softmax(&mut self, x: Var, segment: Vec<usize>) -> Result<Var> {
        let t = &self.nodes[x.0].value;
        if t.cols() != 1 || segment.len() != t.rows() {
            return Err(Error::shape("segment_softmax", t.shape(), &[segment.len(), 1]));
        }
        let segments = segment.iter().copied().max().map_or(0, |m| m + 1);
        let mut max = vec![f64::NEG_INFINITY; segments];
        for (&s, &v) in segment.iter().zip(t.data()) {
            max[s] = max[s].max(v);
        }
        let mut out: Vec<f64> = segment
            .iter()
            .zip(t.data())
            .map(|(&s, &v)| math::exp(v - max[s]))
            .collect();
        let mut sum = vec![0.0; segments];
        for (&s, &e) in segment.iter().zip(&out) {
            sum[s] += e;
        }
        for (&s, o) in segment.iter().zip(out.iter_mut()) {
            *o /= sum[s];
        }
        let value = Tensor::new(t.shape(), out)?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::SegmentSoftmax { x, segment }, rg))
    }

    /// Multiplies each row of `x[m, n]` by the scalar `s[m, 1]`.
    pub fn scale_rows(&mut self, x: Var, s: Var) -> Result<Var> {
        let (tx, ts) = (&self.nodes[x.0].value, &self.nodes[s.0].value);
        if ts.numel() != tx.rows() {
            return Err(Error::shape("scale_rows", tx.shape(), ts.shape()));
        }
        let n = tx.cols();
        let mut data = tx.data().to_vec();
        for (row, &sv) in data.chunks_mut(n.max(1)).zip(ts.data()) {
            for v in row {
                *v *= sv;
            }
        }
        let value = Tensor::new(tx.shape(), data)?;
        let rg = self.rg(x) || self.rg(s);
        Ok(self.push(value, Op::ScaleRows(x, s), rg))
    }

    /// Concatenates `[m, n_i]` matrices along columns.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(Error::Empty("concat inputs"));
        };
        let m = self.nodes[first.0].value.rows();
        for &p in parts {
            let t = &self.nodes[p.0].value;
            if t.rows() != m {
                return Err(Error::shape(
                    "concat_cols",
                    self.nodes[first.0].value.shape(),
                    t.shape(),
                ));
            }
        }
        let widths: Vec<usize> = parts.iter().map(|p| self.nodes[p.0].value.cols()).collect();
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(m * total);
        for r in 0..m {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.nodes[p.0].value.data()[r * w..(r + 1) * w]);
            }
        }
        let value = Tensor::new(&[m, total], out)?;
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(value, Op::ConcatCols(parts.to_vec()), rg))
    }

    /// Columns `start..start + len` of a `[m, n]` view.
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let t = &self.nodes[x.0].value;
        let n = t.cols();
        if start + len > n {
            return Err(Error::shape("slice_cols", t.shape(), &[start, len]));
        }
        let m = t.rows();
        let mut out = Vec::with_capacity(m * len);
        for r in 0..m {
            out.extend_from_slice(&t.data()[r * n + start..r * n + start + len]);
        }
        let value = Tensor::new(&[m, len], out)?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::SliceCols { x, start }, rg))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.nodes[x.0].value.clone().reshape(shape)?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::Reshape(x), rg))
    }

    /// Sum of all elements as a scalar.
    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.data(x).iter().sum();
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.nodes[x.0].value.numel().max(1);
        let s = self.sum(x);
        self.scale(s, 1.0 / n as f64)
    }

    /// Inverted dropout: zeroes elements with probability `p`, rescales the rest.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, p: f64, rng: &mut R) -> Var {
        if p <= 0.0 {
            return x;
        }
        let keep = 1.0 / (1.0 - p);
        let mask: Vec<f64> = (0..self.nodes[x.0].value.numel())
            .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
            .collect();
        let t = &self.nodes[x.0].value;
        let data = t.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
        let value = Tensor::new(t.shape(), data).expect("same shape");
        let rg = self.rg(x);
        self.push(value, Op::Dropout { x, mask }, rg)
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lt = &self.nodes[loss.0].value;
        if lt.numel() != 1 {
            return Err(Error::NonScalarLoss {
                shape: lt.shape().to_vec(),
            });
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[idx];
        let y = node.value.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                let (m, k, n) = (ta.rows(), ta.cols(), tb.shape()[1]);
                if self.rg(*a) {
                    kernels::matmul_nt_acc(g, tb.data(), m, k, n, acc(grads, *a, m * k));
                }
                if self.rg(*b) {
                    kernels::matmul_tn_acc(ta.data(), g, m, k, n, acc(grads, *b, k * n));
                }
            }
            Op::AddRow(x, b) => {
                if self.rg(*x) {
                    add_into(acc(grads, *x, g.len()), g);
                }
                if self.rg(*b) {
                    let n = self.nodes[b.0].value.numel();
                    let gb = acc(grads, *b, n);
                    for row in g.chunks(n.max(1)) {
                        add_into(gb, row);
                    }
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if self.rg(v) {
                        add_into(acc(grads, v, g.len()), g);
                    }
                }
            }
            Op::Sub(a, b) => {
                if self.rg(*a) {
                    add_into(acc(grads, *a, g.len()), g);
                }
                if self.rg(*b) {
                    for (o, &gv) in acc(grads, *b, g.len()).iter_mut().zip(g) {
                        *o -= gv;
                    }
                }
            }
            Op::Mul(a, b) => {
                let (da, db) = (self.data(*a), self.data(*b));
                if self.rg(*a) {
                    for ((o, &gv), &bv) in acc(grads, *a, g.len()).iter_mut().zip(g).zip(db) {
                        *o += gv * bv;
                    }
                }
                if self.rg(*b) {
                    for ((o, &gv), &av) in acc(grads, *b, g.len()).iter_mut().zip(g).zip(da) {
                        *o += gv * av;
                    }
                }
            }
            Op::Div(a, b) => {
                let db = self.data(*b);
                if self.rg(*a) {
                    for ((o, &gv), &bv) in acc(grads, *a, g.len()).iter_mut().zip(g).zip(db) {
                        *o += gv / bv;
                    }
                }
                if self.rg(*b) {
                    let out = acc(grads, *b, g.len());
                    for i in 0..g.len() {
                        out[i] -= g[i] * y[i] / db[i];
                    }
                }
            }
            Op::Scale(x, c) => {
                for (o, &gv) in acc(grads, *x, g.len()).iter_mut().zip(g) {
                    *o += gv * c;
                }
            }
            Op::AddScalar(x) | Op::Reshape(x) => add_into(acc(grads, *x, g.len()), g),
            Op::Sigmoid(x) => {
                for ((o, &gv), &yv) in acc(grads, *x, g.len()).iter_mut().zip(g).zip(y) {
                    *o += gv * yv * (1.0 - yv);
                }
            }
            Op::Tanh(x) => {
                for ((o, &gv), &yv) in acc(grads, *x, g.len()).iter_mut().zip(g).zip(y) {
                    *o += gv * (1.0 - yv * yv);
                }
            }
            Op::Gelu(x) => {
                let xs = self.data(*x);
                for ((o, &gv), &v) in acc(grads, *x, g.len()).iter_mut().zip(g).zip(xs) {
                    let u = GELU_C * (v + GELU_A * v * v * v);
                    let t = math::tanh(u);
                    let du = GELU_C * (1.0 + 3.0 * GELU_A * v * v);
                    *o += gv * (0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du);
                }
            }
            Op::Softplus(x) => {
                let xs = self.data(*x);
                for ((o, &gv), &v) in acc(grads, *x, g.len()).iter_mut().zip(g).zip(xs) {
                    *o += gv * math::sigmoid(v);
                }
            }
            Op::Exp(x) => {
                for ((o, &gv), &yv) in acc(grads, *x, g.len()).iter_mut().zip(g).zip(y) {
                    *o += gv * yv;
                }
            }
            Op::Log(x) => {
                let xs = self.data(*x);
                for ((o, &gv), &v) in acc(grads, *x, g.len()).iter_mut().zip(g).zip(xs) {
                    *o += gv / v;
                }
            }
            Op::Abs(x) => {
                let xs = self.data(*x);
                for ((o, &gv), &v) in acc(grads, *x, g.len()).iter_mut().zip(g).zip(xs) {
                    let s = if v > 0.0 {
                        1.0
                    } else if v < 0.0 {
                        -1.0
                    } else {
                        0.0
                    };
                    *o += gv * s;
                }
            }
            Op::ClampMin(x, floor) => {
                let xs = self.data(*x);
                for ((o, &gv), &v) in acc(grads, *x, g.len()).iter_mut().zip(g).zip(xs) {
                    if v > *floor {
                        *o += gv;
                    }
                }
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                rstd,
            } => {
                let xs = self.data(*x);
                let gam = self.data(*gamma);
                let n = gam.len();
                let rows = xs.len() / n;
                let mut xhat = vec![0.0; n];
                let mut dxhat = vec![0.0; n];
                let mut dgamma = vec![0.0; n];
                let mut dbeta = vec![0.0; n];
                let want_x = self.rg(*x);
                for r in 0..rows {
                    let row = &xs[r * n..(r + 1) * n];
                    let gr = &g[r * n..(r + 1) * n];
                    let mean = row.iter().sum::<f64>() / n as f64;
                    for j in 0..n {
                        xhat[j] = (row[j] - mean) * rstd[r];
                        dxhat[j] = gr[j] * gam[j];
                        dgamma[j] += gr[j] * xhat[j];
                        dbeta[j] += gr[j];
                    }
                    if want_x {
                        let sum_d: f64 = dxhat.iter().sum();
                        let sum_dx: f64 = dxhat.iter().zip(&xhat).map(|(a, b)| a * b).sum();
                        let out = &mut acc(grads, *x, xs.len())[r * n..(r + 1) * n];
                        let k = rstd[r] / n as f64;
                        for j in 0..n {
                            out[j] += k * (n as f64 * dxhat[j] - sum_d - xhat[j] * sum_dx);
                        }
                    }
                }
                if self.rg(*gamma) {
                    add_into(acc(grads, *gamma, n), &dgamma);
                }
                if self.rg(*beta) {
                    add_into(acc(grads, *beta, n), &dbeta);
                }
            }
            Op::SoftmaxRows(x) => {
                let n = node.value.cols();
                let out = acc(grads, *x, g.len());
                for ((orow, grow), yrow) in out.chunks_mut(n).zip(g.chunks(n)).zip(y.chunks(n)) {
                    let dot: f64 = grow.iter().zip(yrow).map(|(a, b)| a * b).sum();
                    for j in 0..n {
                        orow[j] += yrow[j] * (grow[j] - dot);
                    }
                }
            }
            Op::Attention {
                qkv,
                seq_len,
                heads,
                probs,
            } => {
                let src = self.data(*qkv);
                let cols = self.nodes[qkv.0].value.cols();
                let d = cols / 3;
                let dh = d / heads;
                let s = *seq_len;
                let batches = src.len() / cols / s;
                let scale = 1.0 / math::sqrt(dh as f64);
                let out = acc(grads, *qkv, src.len());
                let mut dp = vec![0.0; s];
                for b in 0..batches {
                    for h in 0..*heads {
                        let pbase = (b * heads + h) * s * s;
                        for i in 0..s {
                            let go = &g[(b * s + i) * d + h * dh..][..dh];
                            let prow = &probs[pbase + i * s..pbase + (i + 1) * s];
                            for j in 0..s {
                                let vrow = (b * s + j) * cols + 2 * d + h * dh;
                                let v = &src[vrow..vrow + dh];
                                dp[j] = go.iter().zip(v).map(|(a, c)| a * c).sum();
                                for t in 0..dh {
                                    out[vrow + t] += prow[j] * go[t];
                                }
                            }
                            let dot: f64 = prow.iter().zip(&dp).map(|(a, c)| a * c).sum();
                            let qrow = (b * s + i) * cols + h * dh;
                            for j in 0..s {
                                let ds = prow[j] * (dp[j] - dot) * scale;
                                if ds == 0.0 {
                                    continue;
                                }
                                let krow = (b * s + j) * cols + d + h * dh;
                                for t in 0..dh {
                                    out[qrow + t] += ds * src[krow + t];
                                    out[krow + t] += ds * src[qrow + t];
                                }
                            }
                        }
                    }
                }
            }
            Op::Im2Col {
                x,
                seq_len,
                kernel,
            } => {
                let c = self.nodes[x.0].value.cols();
                let rows = self.nodes[x.0].value.rows();
                let pad = kernel / 2;
                let out = acc(grads, *x, rows * c);
                for r in 0..rows {
                    let (b, s) = (r / seq_len, r % seq_len);
                    for kk in 0..*kernel {
                        let src = s as isize + kk as isize - pad as isize;
                        if src < 0 || src >= *seq_len as isize {
                            continue;
                        }
                        let dst = b * seq_len + src as usize;
                        add_into(
                            &mut out[dst * c..(dst + 1) * c],
                            &g[r * kernel * c + kk * c..][..c],
                        );
                    }
                }
            }
            Op::Gather { x, index } => {
                let n = node.value.cols();
                let len = self.nodes[x.0].value.numel();
                let out = acc(grads, *x, len);
                for (r, &i) in index.iter().enumerate() {
                    add_into(&mut out[i * n..(i + 1) * n], &g[r * n..(r + 1) * n]);
                }
            }
            Op::SegmentSum { x, segment } => {
                let n = node.value.cols();
                let out = acc(grads, *x, segment.len() * n);
                for (p, &s) in segment.iter().enumerate() {
                    add_into(&mut out[p * n..(p + 1) * n], &g[s * n..(s + 1) * n]);
                }
            }
            Op::SegmentSoftmax { x, segment } => {
                let segments = segment.iter().copied().max().map_or(0, |m| m + 1);
                let mut dot = vec![0.0; segments];
                for ((&s, &gv), &yv) in segment.iter().zip(g).zip(y) {
                    dot[s] += gv * yv;
                }
                let out = acc(grads, *x, g.len());
                for (p, &s) in segment.iter().enumerate() {
                    out[p] += y[p] * (g[p] - dot[s]);
                }
            }
            Op::ScaleRows(x, sv) => {
                let n = node.value.cols().max(1);
                let (xs, ss) = (self.data(*x), self.data(*sv));
                if self.rg(*x) {
                    let out = acc(grads, *x, g.len());
                    for (r, &s) in ss.iter().enumerate() {
                        for j in 0..n {
                            out[r * n + j] += g[r * n + j] * s;
                        }
                    }
                }
                if self.rg(*sv) {
                    let out = acc(grads, *sv, ss.len());
                    for (r, o) in out.iter_mut().enumerate() {
                        *o += g[r * n..(r + 1) * n]
                            .iter()
                            .zip(&xs[r * n..(r + 1) * n])
                            .map(|(a, b)| a * b)
                            .sum::<f64>();
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let total = node.value.cols();
                let m = node.value.rows();
                let mut offset = 0;
                for &p in parts {
                    let w = self.nodes[p.0].value.cols();
                    if self.rg(p) {
                        let out = acc(grads, p, m * w);
                        for r in 0..m {
                            add_into(
                                &mut out[r * w..(r + 1) * w],
                                &g[r * total + offset..r * total + offset + w],
                            );
                        }
                    }
                    offset += w;
                }
            }
            Op::SliceCols { x, start } => {
                let len = node.value.cols();
                let n = self.nodes[x.0].value.cols();
                let m = node.value.rows();
                let out = acc(grads, *x, m * n);
                for r in 0..m {
                    add_into(
                        &mut out[r * n + start..r * n + start + len],
                        &g[r * len..(r + 1) * len],
                    );
                }
            }
            Op::Sum(x) => {
                let len = self.nodes[x.0].value.numel();
                for o in acc(grads, *x, len) {
                    *o += g[0];
                }
            }
            Op::Dropout { x, mask } => {
                for ((o, &gv), &mv) in acc(grads, *x, g.len()).iter_mut().zip(g).zip(mask) {
                    *o += gv * mv;
                }
            }
        }
    }
}

fn acc(grads: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut [f64] {
    grads[v.0].get_or_insert_with(|| vec![0.0; len])
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}
