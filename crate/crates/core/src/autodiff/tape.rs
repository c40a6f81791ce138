//! Reverse-mode gradient tape.
//!
//! A [`Tape`] is built fresh for every forward pass. Each operation appends a
//! node holding its output value and enough saved state to run its adjoint;
//! [`Tape::backward`] then walks the nodes in reverse creation order.

use super::param::{Param, ParamId, ParamStore};
use super::tensor::{
    self, axis_split, matmul_at_into, matmul_bt_into, softmax_strided, Tensor,
};
use crate::error::{Error, Result};

/// Pre-softmax score given to masked-out attention positions.
pub const MASK_FILL: f64 = -1e9;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    AddRow(usize, usize),
    Scale(usize, f64),
    Relu(usize),
    Sigmoid(usize),
    Tanh(usize),
    Softmax { x: usize, outer: usize, len: usize, inner: usize },
    LayerNorm { x: usize, gain: usize, bias: usize, xhat: Vec<f64>, inv_std: Vec<f64> },
    Attention { q: usize, k: usize, v: usize, heads: usize, weights: Vec<f64> },
    GatherRows { table: usize, ids: Vec<usize> },
    ConcatRows(Vec<usize>),
    ConcatCols(Vec<usize>),
    SliceRows { x: usize, start: usize },
    SliceCols { x: usize, start: usize },
    Windows { x: usize, width: usize, pad: usize },
    MaxRows { x: usize, arg: Vec<usize> },
    CrossEntropy { logits: usize, targets: Vec<usize>, probs: Vec<f64> },
    Sum(usize),
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
    param: Option<ParamId>,
}

/// Dynamic computation graph for one forward/backward pass.
pub struct Tape<'s> {
    store: Option<&'s ParamStore>,
    trainable: Vec<bool>,
    param_vars: Vec<Option<Var>>,
    nodes: Vec<Node>,
    check_finite: bool,
}

impl Default for Tape<'_> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'s> Tape<'s> {
    /// A tape without a parameter store; leaves come from [`Tape::input`] and
    /// [`Tape::constant`].
    pub fn new() -> Self {
        Tape { store: None, trainable: Vec::new(), param_vars: Vec::new(), nodes: Vec::new(), check_finite: false }
    }

    /// A tape over `store` where every parameter receives gradients.
    pub fn with_params(store: &'s ParamStore) -> Self {
        Self::with_trainable(store, |_| true)
    }

    /// A tape over `store` where only parameters selected by `trainable`
    /// receive gradients; the rest enter the graph as constants.
    pub fn with_trainable(store: &'s ParamStore, trainable: impl Fn(&Param) -> bool) -> Self {
        let flags = store.iter().map(|(_, p)| trainable(p)).collect();
        Tape {
            store: Some(store),
            trainable: flags,
            param_vars: vec![None; store.len()],
            nodes: Vec::new(),
            check_finite: false,
        }
    }

    /// Raise [`Error::NonFinite`] whenever an op produces NaN or infinity.
    pub fn set_finite_checks(&mut self, on: bool) {
        self.check_finite = on;
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

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, name: &'static str, value: Tensor, op: Op, needs_grad: bool) -> Result<Var> {
        if self.check_finite && !value.all_finite() {
            return Err(Error::NonFinite(name));
        }
        self.nodes.push(Node { value, op, needs_grad, param: None });
        Ok(Var(self.nodes.len() - 1))
    }

    fn ng(&self, v: usize) -> bool {
        self.nodes[v].needs_grad
    }

    fn val(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Leaf that does not receive gradients.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, needs_grad: false, param: None });
        Var(self.nodes.len() - 1)
    }

    /// Current value of a stored parameter as a constant leaf.
    pub fn param_frozen(&mut self, id: ParamId) -> Var {
        let store = self.store.expect("tape has no parameter store");
        self.constant(store.value(id).clone())
    }

    /// Copy of `v` cut off from the graph.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.val(v).clone();
        self.constant(value)
    }

    /// Leaf that receives gradients (queried with [`Gradients::wrt`]).
    pub fn input(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, needs_grad: true, param: None });
        Var(self.nodes.len() - 1)
    }

    /// Leaf for a stored parameter. Repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.0] {
            return v;
        }
        let store = self.store.expect("tape has no parameter store");
        let needs_grad = self.trainable[id.0];
        self.nodes.push(Node {
            value: store.value(id).clone(),
            op: Op::Leaf,
            needs_grad,
            param: needs_grad.then_some(id),
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars[id.0] = Some(v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.val(a).matmul(self.val(b))?;
        let ng = self.ng(a.0) || self.ng(b.0);
        self.push("matmul", out, Op::MatMul(a.0, b.0), ng)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(op, format!("{:?} vs {:?}", self.shape(a), self.shape(b))));
        }
        Ok(())
    }

    fn zip_with(&mut self, name: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        self.same_shape(name, a, b)?;
        let data = self.val(a).data().iter().zip(self.val(b).data()).map(|(&x, &y)| f(x, y)).collect();
        let out = Tensor::new(self.shape(a).to_vec(), data)?;
        let ng = self.ng(a.0) || self.ng(b.0);
        self.push(name, out, op, ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("add", a, b, |x, y| x + y, Op::Add(a.0, b.0))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("sub", a, b, |x, y| x - y, Op::Sub(a.0, b.0))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("mul", a, b, |x, y| x * y, Op::Mul(a.0, b.0))
    }

    /// `x (r x c) + bias (1 x c)` broadcast over rows.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let c = self.val(x).cols();
        if self.val(bias).len() != c {
            return Err(Error::shape("add_row", format!("{:?} + {:?}", self.shape(x), self.shape(bias))));
        }
        let b = self.val(bias).data();
        let mut data = self.val(x).data().to_vec();
        for row in data.chunks_mut(c) {
            for (o, bv) in row.iter_mut().zip(b) {
                *o += bv;
            }
        }
        let out = Tensor::new(self.shape(x).to_vec(), data)?;
        let ng = self.ng(x.0) || self.ng(bias.0);
        self.push("add_row", out, Op::AddRow(x.0, bias.0), ng)
    }

    /// `x * w + b` for a row-major batch `x`.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let y = self.matmul(x, w)?;
        self.add_row(y, b)
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Result<Var> {
        let data = self.val(x).data().iter().map(|v| v * s).collect();
        let out = Tensor::new(self.shape(x).to_vec(), data)?;
        let ng = self.ng(x.0);
        self.push("scale", out, Op::Scale(x.0, s), ng)
    }

    fn unary(&mut self, name: &'static str, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Result<Var> {
        let data = self.val(x).data().iter().map(|&v| f(v)).collect();
        let out = Tensor::new(self.shape(x).to_vec(), data)?;
        let ng = self.ng(x.0);
        self.push(name, out, op, ng)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.unary("relu", x, |v| if v > 0.0 || v.is_nan() { v } else { 0.0 }, Op::Relu(x.0))
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary("sigmoid", x, sigmoid, Op::Sigmoid(x.0))
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.unary("tanh", x, f64::tanh, Op::Tanh(x.0))
    }

    /// Softmax along `axis` with max subtraction.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let (outer, len, inner) = axis_split(self.shape(x), axis, "softmax")?;
        let out = self.val(x).softmax(axis)?;
        let ng = self.ng(x.0);
        self.push("softmax", out, Op::Softmax { x: x.0, outer, len, inner }, ng)
    }

    /// Softmax over the last axis.
    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let axis = self.shape(x).len() - 1;
        self.softmax(x, axis)
    }

    /// Normalises every row to zero mean and unit variance (variance
    /// epsilon 1e-6), then applies `gain` and `bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        const EPS: f64 = 1e-6;
        let d = self.val(x).cols();
        if self.val(gain).len() != d || self.val(bias).len() != d {
            return Err(Error::shape("layer_norm", format!("last dim {} vs gain/bias {}/{}", d, self.val(gain).len(), self.val(bias).len())));
        }
        let rows = self.val(x).rows();
        let xs = self.val(x).data();
        let g = self.val(gain).data();
        let b = self.val(bias).data();
        let mut xhat = vec![0.0; rows * d];
        let mut inv_std = vec![0.0; rows];
        let mut out = vec![0.0; rows * d];
        for r in 0..rows {
            let row = &xs[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let is = 1.0 / (var + EPS).sqrt();
            inv_std[r] = is;
            for c in 0..d {
                let h = (row[c] - mean) * is;
                xhat[r * d + c] = h;
                out[r * d + c] = g[c] * h + b[c];
            }
        }
        let out = Tensor::new(self.shape(x).to_vec(), out)?;
        let ng = self.ng(x.0) || self.ng(gain.0) || self.ng(bias.0);
        self.push("layer_norm", out, Op::LayerNorm { x: x.0, gain: gain.0, bias: bias.0, xhat, inv_std }, ng)
    }

    /// Multi-head scaled dot-product attention core.
    ///
    /// `q` is `kq x D`, `k` and `v` are `kv x D`, `mask` is a row-major
    /// `kq x kv` visibility matrix. Each of the `heads` column blocks of
    /// width `D / heads` attends independently; masked positions get
    /// [`MASK_FILL`] before the softmax. Returns the concatenated head
    /// outputs (`kq x D`).
    pub fn attention(&mut self, q: Var, k: Var, v: Var, mask: &[bool], heads: usize) -> Result<Var> {
        let (kq, d) = (self.val(q).rows(), self.val(q).cols());
        let kv = self.val(k).rows();
        if self.val(k).cols() != d || self.val(v).cols() != d || self.val(v).rows() != kv {
            return Err(Error::shape("attention", format!("q {:?} k {:?} v {:?}", self.shape(q), self.shape(k), self.shape(v))));
        }
        if mask.len() != kq * kv {
            return Err(Error::shape("attention", format!("mask has {} entries, need {}x{}", mask.len(), kq, kv)));
        }
        if heads == 0 || d % heads != 0 {
            return Err(Error::shape("attention", format!("width {} not divisible by {} heads", d, heads)));
        }
        for i in 0..kq {
            if !mask[i * kv..(i + 1) * kv].iter().any(|&m| m) {
                return Err(Error::DegenerateMask { row: i });
            }
        }
        let dk = d / heads;
        let scale = 1.0 / (dk as f64).sqrt();
        let (qs, ks, vs) = (self.val(q).data(), self.val(k).data(), self.val(v).data());
        let mut weights = vec![0.0; heads * kq * kv];
        let mut out = vec![0.0; kq * d];
        for h in 0..heads {
            let off = h * dk;
            for i in 0..kq {
                let w = &mut weights[(h * kq + i) * kv..(h * kq + i + 1) * kv];
                let qi = &qs[i * d + off..i * d + off + dk];
                for j in 0..kv {
                    let kj = &ks[j * d + off..j * d + off + dk];
                    let fill = if mask[i * kv + j] { 0.0 } else { MASK_FILL };
                    w[j] = tensor::dot(qi, kj) * scale + fill;
                }
                softmax_strided(w, 0, kv, 1);
                let o = &mut out[i * d + off..i * d + off + dk];
                for j in 0..kv {
                    let a = w[j];
                    if a == 0.0 {
                        continue;
                    }
                    for (oc, vc) in o.iter_mut().zip(&vs[j * d + off..j * d + off + dk]) {
                        *oc += a * vc;
                    }
                }
            }
        }
        let out = Tensor::new(vec![kq, d], out)?;
        let ng = self.ng(q.0) || self.ng(k.0) || self.ng(v.0);
        self.push("attention", out, Op::Attention { q: q.0, k: k.0, v: v.0, heads, weights }, ng)
    }

    /// Attention weights saved by an [`Tape::attention`] node, laid out as
    /// `heads x kq x kv`.
    pub fn attention_weights(&self, v: Var) -> Option<&[f64]> {
        match &self.nodes[v.0].op {
            Op::Attention { weights, .. } => Some(weights),
            _ => None,
        }
    }

    /// Rows of `table` selected by `ids`.
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let t = self.val(table);
        let (n, c) = (t.rows(), t.cols());
        let mut data = Vec::with_capacity(ids.len() * c);
        for &i in ids {
            if i >= n {
                return Err(Error::shape("gather_rows", format!("row {} of {}", i, n)));
            }
            data.extend_from_slice(t.row_slice(i));
        }
        let out = Tensor::new(vec![ids.len(), c], data)?;
        let ng = self.ng(table.0);
        self.push("gather_rows", out, Op::GatherRows { table: table.0, ids: ids.to_vec() }, ng)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let c = self.val(parts[0]).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            if self.val(p).cols() != c {
                return Err(Error::shape("concat_rows", format!("{} vs {} columns", self.val(p).cols(), c)));
            }
            rows += self.val(p).rows();
            data.extend_from_slice(self.val(p).data());
        }
        let out = Tensor::new(vec![rows, c], data)?;
        let ng = parts.iter().any(|p| self.ng(p.0));
        self.push("concat_rows", out, Op::ConcatRows(parts.iter().map(|p| p.0).collect()), ng)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let r = self.val(parts[0]).rows();
        if parts.iter().any(|&p| self.val(p).rows() != r) {
            return Err(Error::shape("concat_cols", "row counts differ"));
        }
        let total: usize = parts.iter().map(|&p| self.val(p).cols()).sum();
        let mut data = Vec::with_capacity(r * total);
        for i in 0..r {
            for &p in parts {
                data.extend_from_slice(self.val(p).row_slice(i));
            }
        }
        let out = Tensor::new(vec![r, total], data)?;
        let ng = parts.iter().any(|p| self.ng(p.0));
        self.push("concat_cols", out, Op::ConcatCols(parts.iter().map(|p| p.0).collect()), ng)
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.val(x);
        if start + len > t.rows() {
            return Err(Error::shape("slice_rows", format!("{}..{} of {}", start, start + len, t.rows())));
        }
        let c = t.cols();
        let out = Tensor::new(vec![len, c], t.data()[start * c..(start + len) * c].to_vec())?;
        let ng = self.ng(x.0);
        self.push("slice_rows", out, Op::SliceRows { x: x.0, start }, ng)
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.val(x);
        let (r, c) = (t.rows(), t.cols());
        if start + len > c {
            return Err(Error::shape("slice_cols", format!("{}..{} of {}", start, start + len, c)));
        }
        let mut data = Vec::with_capacity(r * len);
        for i in 0..r {
            data.extend_from_slice(&t.data()[i * c + start..i * c + start + len]);
        }
        let out = Tensor::new(vec![r, len], data)?;
        let ng = self.ng(x.0);
        self.push("slice_cols", out, Op::SliceCols { x: x.0, start }, ng)
    }

    /// Sliding windows over rows (im2col): `pad` zero rows are conceptually
    /// added before and after `x`, and every run of `width` consecutive rows
    /// becomes one output row of length `width * cols`.
    pub fn windows(&mut self, x: Var, width: usize, pad: usize) -> Result<Var> {
        let t = self.val(x);
        let (k, c) = (t.rows(), t.cols());
        if width == 0 || k + 2 * pad < width {
            return Err(Error::shape("windows", format!("width {} over {} rows (pad {})", width, k, pad)));
        }
        let n = k + 2 * pad - width + 1;
        let mut data = vec![0.0; n * width * c];
        for r in 0..n {
            for j in 0..width {
                let src = r + j;
                if src < pad || src - pad >= k {
                    continue;
                }
                let dst = (r * width + j) * c;
                data[dst..dst + c].copy_from_slice(t.row_slice(src - pad));
            }
        }
        let out = Tensor::new(vec![n, width * c], data)?;
        let ng = self.ng(x.0);
        self.push("windows", out, Op::Windows { x: x.0, width, pad }, ng)
    }

    /// Column-wise maximum over rows (max-over-time pooling), `1 x cols`.
    pub fn max_rows(&mut self, x: Var) -> Result<Var> {
        let t = self.val(x);
        let (r, c) = (t.rows(), t.cols());
        if r == 0 {
            return Err(Error::shape("max_rows", "no rows"));
        }
        let mut arg = vec![0usize; c];
        let mut best = t.row_slice(0).to_vec();
        for i in 1..r {
            for (j, &v) in t.row_slice(i).iter().enumerate() {
                if v > best[j] {
                    best[j] = v;
                    arg[j] = i;
                }
            }
        }
        let out = Tensor::new(vec![1, c], best)?;
        let ng = self.ng(x.0);
        self.push("max_rows", out, Op::MaxRows { x: x.0, arg }, ng)
    }

    /// Summed softmax cross-entropy, `sum_r -log softmax(logits_r)[targets_r]`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let t = self.val(logits);
        let (r, c) = (t.rows(), t.cols());
        if targets.len() != r {
            return Err(Error::shape("cross_entropy", format!("{} targets for {} rows", targets.len(), r)));
        }
        if let Some(&bad) = targets.iter().find(|&&y| y >= c) {
            return Err(Error::InvalidArgument(format!("target class {} out of {} classes", bad, c)));
        }
        let mut probs = t.data().to_vec();
        let mut loss = 0.0;
        for (i, &y) in targets.iter().enumerate() {
            let row = &t.data()[i * c..(i + 1) * c];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            loss += lse - row[y];
            softmax_strided(&mut probs, i * c, c, 1);
        }
        let ng = self.ng(logits.0);
        self.push(
            "cross_entropy",
            Tensor::scalar(loss),
            Op::CrossEntropy { logits: logits.0, targets: targets.to_vec(), probs },
            ng,
        )
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.val(x).sum();
        let ng = self.ng(x.0);
        self.push("sum", Tensor::scalar(s), Op::Sum(x.0), ng)
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let n = self.val(x).len() as f64;
        let s = self.sum(x)?;
        self.scale(s, 1.0 / n)
    }

    /// Adds scalar losses.
    pub fn add_all(&mut self, terms: &[Var]) -> Result<Var> {
        let mut acc = terms[0];
        for &t in &terms[1..] {
            acc = self.add(acc, t)?;
        }
        Ok(acc)
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.val(loss).len() != 1 {
            return Err(Error::shape("backward", format!("loss must be scalar, got {:?}", self.shape(loss))));
        }
        let n = self.nodes.len();
        let mut grads: Vec<Option<Vec<f64>>> = Vec::with_capacity(n);
        grads.resize_with(n, || None);
        if self.nodes[loss.0].needs_grad {
            grads[loss.0] = Some(vec![1.0]);
        }
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.backprop(idx, &g, &mut grads);
        }
        let mut params = Vec::new();
        if let Some(store) = self.store {
            params.resize_with(store.len(), || None);
            for (i, node) in self.nodes.iter().enumerate() {
                if let (Some(id), Some(g)) = (node.param, grads[i].as_ref()) {
                    params[id.0] = Some(Tensor::new(node.value.shape().to_vec(), g.clone())?);
                }
            }
        }
        let leaves = self
            .nodes
            .iter()
            .enumerate()
            .map(|(i, node)| if matches!(node.op, Op::Leaf) { grads[i].take() } else { None })
            .collect();
        Ok(Gradients { leaves, params: ParamGrads { grads: params } })
    }

    fn slot<'g>(&self, grads: &'g mut [Option<Vec<f64>>], i: usize) -> Option<&'g mut Vec<f64>> {
        if !self.nodes[i].needs_grad {
            return None;
        }
        let len = self.nodes[i].value.len();
        Some(grads[i].get_or_insert_with(|| vec![0.0; len]))
    }

    fn backprop(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let out = &self.nodes[idx].value;
        let value = |i: usize| &self.nodes[i].value;
        match &self.nodes[idx].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, nn) = (value(*a).shape()[0], value(*a).shape()[1]);
                let p = value(*b).shape()[1];
                if let Some(da) = self.slot(grads, *a) {
                    matmul_bt_into(g, value(*b).data(), da, m, p, nn);
                }
                if let Some(db) = self.slot(grads, *b) {
                    matmul_at_into(value(*a).data(), g, db, m, nn, p);
                }
            }
            Op::Add(a, b) => {
                for i in [*a, *b] {
                    if let Some(d) = self.slot(grads, i) {
                        axpy(d, 1.0, g);
                    }
                }
            }
            Op::Sub(a, b) => {
                if let Some(d) = self.slot(grads, *a) {
                    axpy(d, 1.0, g);
                }
                if let Some(d) = self.slot(grads, *b) {
                    axpy(d, -1.0, g);
                }
            }
            Op::Mul(a, b) => {
                if let Some(d) = self.slot(grads, *a) {
                    for ((o, gi), y) in d.iter_mut().zip(g).zip(value(*b).data()) {
                        *o += gi * y;
                    }
                }
                if let Some(d) = self.slot(grads, *b) {
                    for ((o, gi), x) in d.iter_mut().zip(g).zip(value(*a).data()) {
                        *o += gi * x;
                    }
                }
            }
            Op::AddRow(x, b) => {
                if let Some(d) = self.slot(grads, *x) {
                    axpy(d, 1.0, g);
                }
                let c = out.cols();
                if let Some(d) = self.slot(grads, *b) {
                    for row in g.chunks(c) {
                        axpy(d, 1.0, row);
                    }
                }
            }
            Op::Scale(x, s) => {
                if let Some(d) = self.slot(grads, *x) {
                    axpy(d, *s, g);
                }
            }
            Op::Relu(x) => {
                if let Some(d) = self.slot(grads, *x) {
                    for ((o, gi), y) in d.iter_mut().zip(g).zip(out.data()) {
                        if *y > 0.0 {
                            *o += gi;
                        }
                    }
                }
            }
            Op::Sigmoid(x) => {
                if let Some(d) = self.slot(grads, *x) {
                    for ((o, gi), y) in d.iter_mut().zip(g).zip(out.data()) {
                        *o += gi * y * (1.0 - y);
                    }
                }
            }
            Op::Tanh(x) => {
                if let Some(d) = self.slot(grads, *x) {
                    for ((o, gi), y) in d.iter_mut().zip(g).zip(out.data()) {
                        *o += gi * (1.0 - y * y);
                    }
                }
            }
            Op::Softmax { x, outer, len, inner } => {
                if let Some(d) = self.slot(grads, *x) {
                    let y = out.data();
                    for o in 0..*outer {
                        for i in 0..*inner {
                            let base = o * len * inner + i;
                            let dotp: f64 = (0..*len).map(|j| g[base + j * inner] * y[base + j * inner]).sum();
                            for j in 0..*len {
                                let at = base + j * inner;
                                d[at] += y[at] * (g[at] - dotp);
                            }
                        }
                    }
                }
            }
            Op::LayerNorm { x, gain, bias, xhat, inv_std } => {
                let dcols = out.cols();
                let gv = value(*gain).data();
                if let Some(d) = self.slot(grads, *gain) {
                    for (gr, hr) in g.chunks(dcols).zip(xhat.chunks(dcols)) {
                        for c in 0..dcols {
                            d[c] += gr[c] * hr[c];
                        }
                    }
                }
                if let Some(d) = self.slot(grads, *bias) {
                    for gr in g.chunks(dcols) {
                        axpy(d, 1.0, gr);
                    }
                }
                if let Some(d) = self.slot(grads, *x) {
                    let nf = dcols as f64;
                    for (r, (gr, hr)) in g.chunks(dcols).zip(xhat.chunks(dcols)).enumerate() {
                        let mut mean_dh = 0.0;
                        let mut mean_dh_h = 0.0;
                        for c in 0..dcols {
                            let dh = gr[c] * gv[c];
                            mean_dh += dh;
                            mean_dh_h += dh * hr[c];
                        }
                        mean_dh /= nf;
                        mean_dh_h /= nf;
                        for c in 0..dcols {
                            let dh = gr[c] * gv[c];
                            d[r * dcols + c] += inv_std[r] * (dh - mean_dh - hr[c] * mean_dh_h);
                        }
                    }
                }
            }
            Op::Attention { q, k, v, heads, weights } => {
                self.attention_backward(g, *q, *k, *v, *heads, weights, grads);
            }
            Op::GatherRows { table, ids } => {
                let c = out.cols();
                if let Some(d) = self.slot(grads, *table) {
                    for (r, &i) in ids.iter().enumerate() {
                        axpy(&mut d[i * c..(i + 1) * c], 1.0, &g[r * c..(r + 1) * c]);
                    }
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let len = value(p).len();
                    if let Some(d) = self.slot(grads, p) {
                        axpy(d, 1.0, &g[off..off + len]);
                    }
                    off += len;
                }
            }
            Op::ConcatCols(parts) => {
                let total = out.cols();
                let mut off = 0;
                for &p in parts {
                    let c = value(p).cols();
                    if let Some(d) = self.slot(grads, p) {
                        for (r, drow) in d.chunks_mut(c).enumerate() {
                            axpy(drow, 1.0, &g[r * total + off..r * total + off + c]);
                        }
                    }
                    off += c;
                }
            }
            Op::SliceRows { x, start } => {
                let c = out.cols();
                if let Some(d) = self.slot(grads, *x) {
                    axpy(&mut d[start * c..start * c + g.len()], 1.0, g);
                }
            }
            Op::SliceCols { x, start } => {
                let len = out.cols();
                let c = value(*x).cols();
                if let Some(d) = self.slot(grads, *x) {
                    for (r, grow) in g.chunks(len).enumerate() {
                        axpy(&mut d[r * c + start..r * c + start + len], 1.0, grow);
                    }
                }
            }
            Op::Windows { x, width, pad } => {
                let src = value(*x);
                let (k, c) = (src.rows(), src.cols());
                if let Some(d) = self.slot(grads, *x) {
                    for r in 0..out.rows() {
                        for j in 0..*width {
                            let s = r + j;
                            if s < *pad || s - pad >= k {
                                continue;
                            }
                            let at = (r * width + j) * c;
                            axpy(&mut d[(s - pad) * c..(s - pad + 1) * c], 1.0, &g[at..at + c]);
                        }
                    }
                }
            }
            Op::MaxRows { x, arg } => {
                let c = out.cols();
                if let Some(d) = self.slot(grads, *x) {
                    for (j, &r) in arg.iter().enumerate() {
                        d[r * c + j] += g[j];
                    }
                }
            }
            Op::CrossEntropy { logits, targets, probs } => {
                let c = value(*logits).cols();
                if let Some(d) = self.slot(grads, *logits) {
                    for (r, &y) in targets.iter().enumerate() {
                        for j in 0..c {
                            let onehot = if j == y { 1.0 } else { 0.0 };
                            d[r * c + j] += g[0] * (probs[r * c + j] - onehot);
                        }
                    }
                }
            }
            Op::Sum(x) => {
                if let Some(d) = self.slot(grads, *x) {
                    for o in d.iter_mut() {
                        *o += g[0];
                    }
                }
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn attention_backward(
        &self,
        g: &[f64],
        q: usize,
        k: usize,
        v: usize,
        heads: usize,
        weights: &[f64],
        grads: &mut [Option<Vec<f64>>],
    ) {
        let (qt, kt, vt) = (&self.nodes[q].value, &self.nodes[k].value, &self.nodes[v].value);
        let (kq, d) = (qt.rows(), qt.cols());
        let kv = kt.rows();
        let dk = d / heads;
        let scale = 1.0 / (dk as f64).sqrt();
        let mut dq = vec![0.0; kq * d];
        let mut dkm = vec![0.0; kv * d];
        let mut dv = vec![0.0; kv * d];
        let mut da = vec![0.0; kv];
        for h in 0..heads {
            let off = h * dk;
            for i in 0..kq {
                let w = &weights[(h * kq + i) * kv..(h * kq + i + 1) * kv];
                let go = &g[i * d + off..i * d + off + dk];
                for j in 0..kv {
                    da[j] = tensor::dot(go, &vt.data()[j * d + off..j * d + off + dk]);
                    if w[j] != 0.0 {
                        axpy(&mut dv[j * d + off..j * d + off + dk], w[j], go);
                    }
                }
                let s: f64 = w.iter().zip(&da).map(|(a, b)| a * b).sum();
                for j in 0..kv {
                    let ds = w[j] * (da[j] - s) * scale;
                    if ds == 0.0 {
                        continue;
                    }
                    axpy(&mut dq[i * d + off..i * d + off + dk], ds, &kt.data()[j * d + off..j * d + off + dk]);
                    axpy(&mut dkm[j * d + off..j * d + off + dk], ds, &qt.data()[i * d + off..i * d + off + dk]);
                }
            }
        }
        for (i, buf) in [(q, dq), (k, dkm), (v, dv)] {
            if let Some(d) = self.slot(grads, i) {
                axpy(d, 1.0, &buf);
            }
        }
    }
}

fn axpy(dst: &mut [f64], a: f64, x: &[f64]) {
    for (o, v) in dst.iter_mut().zip(x) {
        *o += a * v;
    }
}

pub(crate) fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// Result of [`Tape::backward`].
pub struct Gradients {
    leaves: Vec<Option<Vec<f64>>>,
    params: ParamGrads,
}

impl Gradients {
    /// Gradient with respect to a leaf; zeros when the loss does not reach it.
    pub fn wrt(&self, tape: &Tape, v: Var) -> Tensor {
        let shape = tape.shape(v).to_vec();
        match self.leaves.get(v.0).and_then(Option::as_ref) {
            Some(g) => Tensor::new(shape, g.clone()).expect("gradient shape"),
            None => Tensor::zeros(&shape),
        }
    }

    pub fn params(&self) -> &ParamGrads {
        &self.params
    }

    pub fn into_params(self) -> ParamGrads {
        self.params
    }
}

/// Gradients keyed by [`ParamId`]. Parameters the loss never reached are
/// absent and read as zero.
#[derive(Clone, Debug, Default)]
pub struct ParamGrads {
    grads: Vec<Option<Tensor>>,
}

impl ParamGrads {
    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(Option::as_ref)
    }

    /// Gradient for `id`, materialising zeros for unreached parameters.
    pub fn get_or_zero(&self, store: &ParamStore, id: ParamId) -> Tensor {
        self.get(id).cloned().unwrap_or_else(|| Tensor::zeros(store.value(id).shape()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Tensor)> {
        self.grads.iter().enumerate().filter_map(|(i, g)| g.as_ref().map(|g| (ParamId(i), g)))
    }

    /// Adds `other` into `self` (fixed parameter order, so summation is
    /// reproducible).
    pub fn accumulate(&mut self, other: &ParamGrads) {
        if self.grads.len() < other.grads.len() {
            self.grads.resize_with(other.grads.len(), || None);
        }
        for (mine, theirs) in self.grads.iter_mut().zip(&other.grads) {
            if let Some(t) = theirs {
                match mine {
                    Some(m) => axpy(m.data_mut(), 1.0, t.data()),
                    None => *mine = Some(t.clone()),
                }
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for g in self.grads.iter_mut().flatten() {
            for v in g.data_mut() {
                *v *= s;
            }
        }
    }

    /// Euclidean norm over all stored gradients.
    pub fn norm(&self) -> f64 {
        self.grads.iter().flatten().map(|g| g.data().iter().map(|v| v * v).sum::<f64>()).sum::<f64>().sqrt()
    }

    /// Norm restricted to the given parameters.
    pub fn norm_of(&self, ids: &[ParamId]) -> f64 {
        ids.iter().filter_map(|&id| self.get(id)).map(|g| g.data().iter().map(|v| v * v).sum::<f64>()).sum::<f64>().sqrt()
    }
}
