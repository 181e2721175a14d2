//! Reverse-mode differentiation over a linear record of executed operations.
//!
//! Every operation appends one node holding its output value. `backward`
//! walks the nodes in reverse creation order, so each operation is visited
//! exactly once and only after all of its consumers.

use super::kernels::{axpy, dot, matmul_a_bt_acc, matmul_acc, matmul_at_b_acc, softmax_in_place};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
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
    Linear(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Silu(Var),
    SoftmaxRows(Var),
    MaskCausal(Var),
    RmsNormRows {
        x: Var,
        gain: Var,
        inv_rms: Vec<f64>,
    },
    Rope {
        x: Var,
        head_dim: usize,
        cos: Vec<f64>,
        sin: Vec<f64>,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        n_q_heads: usize,
        n_kv_heads: usize,
        head_dim: usize,
        probs: Vec<f64>,
    },
    Gather {
        table: Var,
        ids: Vec<usize>,
    },
    SelectRow(Var, usize),
    SliceCols {
        x: Var,
        start: usize,
    },
    ConcatCols(Vec<Var>),
    Transpose(Var),
    Cosine {
        u: Var,
        v: Var,
        norm_u: f64,
        norm_v: f64,
    },
    Stack(Vec<Var>),
    LogSumExp {
        x: Var,
        weights: Vec<f64>,
    },
    Sum(Var),
    Mean(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Record of differentiable operations. Confined to one thread; build one per
/// forward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
    backward_ran: bool,
    visits: Vec<usize>,
}

fn dim_err(op: &'static str, left: &[usize], right: &[usize]) -> Error {
    Error::Dimension {
        op,
        left: left.to_vec(),
        right: right.to_vec(),
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Registers a leaf; it is differentiated iff `tensor.requires_grad()`.
    pub fn leaf(&mut self, tensor: Tensor) -> Var {
        let needs_grad = tensor.requires_grad();
        self.push(tensor, Op::Leaf, needs_grad)
    }

    pub fn constant(&mut self, tensor: Tensor) -> Var {
        let t = Tensor::from_parts(tensor.shape().to_vec(), tensor.into_data());
        self.push(t, Op::Leaf, false)
    }

    pub fn param(&mut self, tensor: Tensor) -> Var {
        let t = Tensor::from_parts(tensor.shape().to_vec(), tensor.into_data()).with_grad();
        self.push(t, Op::Leaf, true)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.item()
    }

    /// Gradient of the last `backward` root with respect to `v`, if it was
    /// reached.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Detaches the leaf tensor with its populated gradient.
    pub fn take_leaf(&mut self, v: Var) -> Tensor {
        std::mem::replace(&mut self.nodes[v.0].value, Tensor::scalar(0.0))
    }

    /// Node indices visited by the most recent backward pass, in visit order.
    pub fn backward_visits(&self) -> &[usize] {
        &self.visits
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn mat_dims(&self, v: Var, op: &'static str) -> Result<(usize, usize)> {
        match *self.shape(v) {
            [m, n] => Ok((m, n)),
            ref s => Err(dim_err(op, s, &[0, 0])),
        }
    }

    // ---- forward operations ------------------------------------------------

    /// `a[m×k] · b[k×n]`
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.mat_dims(a, "matmul")?;
        let (k2, n) = self.mat_dims(b, "matmul")?;
        if k != k2 {
            return Err(dim_err("matmul", self.shape(a), self.shape(b)));
        }
        let mut out = vec![0.0; m * n];
        matmul_acc(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(Tensor::from_parts(vec![m, n], out), Op::MatMul(a, b), ng))
    }

    /// `x[m×k] · w[n×k]ᵀ`, the layout used for every projection weight.
    pub fn linear(&mut self, x: Var, w: Var) -> Result<Var> {
        let (m, k) = self.mat_dims(x, "linear")?;
        let (n, k2) = self.mat_dims(w, "linear")?;
        if k != k2 {
            return Err(dim_err("linear", self.shape(x), self.shape(w)));
        }
        let mut out = vec![0.0; m * n];
        matmul_a_bt_acc(self.value(x).data(), self.value(w).data(), &mut out, m, k, n);
        let ng = self.ng(x) || self.ng(w);
        Ok(self.push(Tensor::from_parts(vec![m, n], out), Op::Linear(x, w), ng))
    }

    fn zip_same(&mut self, a: Var, b: Var, op_name: &'static str, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(dim_err(op_name, self.shape(a), self.shape(b)));
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let shape = self.shape(a).to_vec();
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(Tensor::from_parts(shape, data), op, ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    /// `x[m×n] + b[n]` broadcast over rows.
    pub fn add_row(&mut self, x: Var, b: Var) -> Result<Var> {
        let n = self.value(x).cols();
        if self.shape(b) != [n] {
            return Err(dim_err("add_row", self.shape(x), self.shape(b)));
        }
        let bias = self.value(b).data().to_vec();
        let mut data = self.value(x).data().to_vec();
        for row in data.chunks_mut(n) {
            for (v, bv) in row.iter_mut().zip(&bias) {
                *v += bv;
            }
        }
        let shape = self.shape(x).to_vec();
        let ng = self.ng(x) || self.ng(b);
        Ok(self.push(Tensor::from_parts(shape, data), Op::AddRow(x, b), ng))
    }

    fn map(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let data = self.value(x).data().iter().map(|&v| f(v)).collect();
        let shape = self.shape(x).to_vec();
        let ng = self.ng(x);
        self.push(Tensor::from_parts(shape, data), op, ng)
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        self.map(x, |v| v * factor, Op::Scale(x, factor))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.map(x, |v| v.max(0.0), Op::Relu(x))
    }

    pub fn silu(&mut self, x: Var) -> Var {
        self.map(x, |v| v / (1.0 + (-v).exp()), Op::Silu(x))
    }

    /// Row-wise softmax with max subtraction. Vectors are treated as one row.
    pub fn softmax_rows(&mut self, x: Var) -> Var {
        let n = self.value(x).cols();
        let mut data = self.value(x).data().to_vec();
        for row in data.chunks_mut(n) {
            softmax_in_place(row);
        }
        let shape = self.shape(x).to_vec();
        let ng = self.ng(x);
        self.push(Tensor::from_parts(shape, data), Op::SoftmaxRows(x), ng)
    }

    /// Sets every entry above the diagonal of a square matrix to `-inf`.
    pub fn mask_causal(&mut self, x: Var) -> Result<Var> {
        let (m, n) = self.mat_dims(x, "mask_causal")?;
        if m != n {
            return Err(dim_err("mask_causal", self.shape(x), &[m, m]));
        }
        let mut data = self.value(x).data().to_vec();
        for i in 0..m {
            for v in &mut data[i * n + i + 1..(i + 1) * n] {
                *v = f64::NEG_INFINITY;
            }
        }
        let ng = self.ng(x);
        Ok(self.push(Tensor::from_parts(vec![m, n], data), Op::MaskCausal(x), ng))
    }

    /// `gain ⊙ x / sqrt(mean(x²) + eps)` applied to each row.
    pub fn rms_norm_rows(&mut self, x: Var, gain: Var, eps: f64) -> Result<Var> {
        let n = self.value(x).cols();
        if self.shape(gain) != [n] {
            return Err(dim_err("rms_norm", self.shape(x), self.shape(gain)));
        }
        let g = self.value(gain).data();
        let xs = self.value(x).data();
        let mut data = Vec::with_capacity(xs.len());
        let mut inv_rms = Vec::with_capacity(xs.len() / n);
        for row in xs.chunks(n) {
            let ms = row.iter().map(|v| v * v).sum::<f64>() / n as f64;
            let r = 1.0 / (ms + eps).sqrt();
            inv_rms.push(r);
            data.extend(row.iter().zip(g).map(|(v, gv)| gv * v * r));
        }
        let shape = self.shape(x).to_vec();
        let ng = self.ng(x) || self.ng(gain);
        Ok(self.push(
            Tensor::from_parts(shape, data),
            Op::RmsNormRows { x, gain, inv_rms },
            ng,
        ))
    }

    /// Rotary position encoding over `x[L × n_heads·head_dim]`, rotating the
    /// pair `(i, i + head_dim/2)` of every head at row `r` by
    /// `positions[r] · base^(−2i/head_dim)`.
    pub fn rope(&mut self, x: Var, head_dim: usize, positions: &[usize], base: f64) -> Result<Var> {
        let (l, width) = self.mat_dims(x, "rope")?;
        if head_dim == 0 || !head_dim.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "rotary encoding needs an even head dimension, got {head_dim}"
            )));
        }
        if width % head_dim != 0 || positions.len() != l {
            return Err(dim_err("rope", &[l, width], &[positions.len(), head_dim]));
        }
        let (cos, sin) = rope_tables(positions, head_dim, base);
        let half = head_dim / 2;
        let mut data = self.value(x).data().to_vec();
        for r in 0..l {
            let c = &cos[r * half..(r + 1) * half];
            let s = &sin[r * half..(r + 1) * half];
            for head in data[r * width..(r + 1) * width].chunks_mut(head_dim) {
                let (lo, hi) = head.split_at_mut(half);
                for i in 0..half {
                    let (x1, x2) = (lo[i], hi[i]);
                    lo[i] = x1 * c[i] - x2 * s[i];
                    hi[i] = x1 * s[i] + x2 * c[i];
                }
            }
        }
        let ng = self.ng(x);
        Ok(self.push(
            Tensor::from_parts(vec![l, width], data),
            Op::Rope { x, head_dim, cos, sin },
            ng,
        ))
    }

    /// Causal grouped-query attention. `q` is `[L × n_q_heads·head_dim]`,
    /// `k` and `v` are `[L × n_kv_heads·head_dim]`; query head `h` reads
    /// key/value head `h / (n_q_heads / n_kv_heads)`.
    pub fn causal_attention(&mut self, q: Var, k: Var, v: Var, n_q_heads: usize, n_kv_heads: usize) -> Result<Var> {
        if n_kv_heads == 0 || !n_q_heads.is_multiple_of(n_kv_heads) {
            return Err(Error::Config(format!(
                "{n_q_heads} query heads cannot be grouped over {n_kv_heads} key/value heads"
            )));
        }
        let (l, qw) = self.mat_dims(q, "attention")?;
        let (lk, kw) = self.mat_dims(k, "attention")?;
        if qw % n_q_heads != 0 {
            return Err(dim_err("attention", &[l, qw], &[n_q_heads]));
        }
        let head_dim = qw / n_q_heads;
        if lk != l || kw != n_kv_heads * head_dim {
            return Err(Error::Config(format!(
                "key tensor {:?} does not hold {n_kv_heads} heads of width {head_dim}",
                self.shape(k)
            )));
        }
        if self.shape(v) != self.shape(k) {
            return Err(dim_err("attention", self.shape(k), self.shape(v)));
        }
        let group = n_q_heads / n_kv_heads;
        let scale = 1.0 / (head_dim as f64).sqrt();
        let ng = self.ng(q) || self.ng(k) || self.ng(v);
        let qd = self.value(q).data();
        let kd = self.value(k).data();
        let vd = self.value(v).data();
        let mut out = vec![0.0; l * qw];
        let mut probs = if ng { vec![0.0; n_q_heads * l * l] } else { Vec::new() };
        let mut row = vec![0.0; l];
        for h in 0..n_q_heads {
            let g = h / group;
            for i in 0..l {
                let qi = &qd[i * qw + h * head_dim..i * qw + (h + 1) * head_dim];
                for j in 0..=i {
                    let kj = &kd[j * kw + g * head_dim..j * kw + (g + 1) * head_dim];
                    row[j] = dot(qi, kj) * scale;
                }
                softmax_in_place(&mut row[..=i]);
                let oi = &mut out[i * qw + h * head_dim..i * qw + (h + 1) * head_dim];
                for j in 0..=i {
                    let vj = &vd[j * kw + g * head_dim..j * kw + (g + 1) * head_dim];
                    axpy(row[j], vj, oi);
                }
                if ng {
                    probs[(h * l + i) * l..(h * l + i) * l + i + 1].copy_from_slice(&row[..=i]);
                }
            }
        }
        Ok(self.push(
            Tensor::from_parts(vec![l, qw], out),
            Op::Attention {
                q,
                k,
                v,
                n_q_heads,
                n_kv_heads,
                head_dim,
                probs,
            },
            ng,
        ))
    }

    /// Attention probabilities `[n_q_heads × L × L]` saved by a differentiable
    /// attention node.
    pub fn attention_probs(&self, v: Var) -> Option<&[f64]> {
        match &self.nodes[v.0].op {
            Op::Attention { probs, .. } if !probs.is_empty() => Some(probs),
            _ => None,
        }
    }

    /// Rows of `table[V×d]` selected by `ids`.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (rows, d) = self.mat_dims(table, "gather")?;
        let mut data = Vec::with_capacity(ids.len() * d);
        let t = self.value(table).data();
        for &id in ids {
            if id >= rows {
                return Err(Error::UnknownToken { id, vocab_size: rows });
            }
            data.extend_from_slice(&t[id * d..(id + 1) * d]);
        }
        if ids.is_empty() {
            return Err(Error::Validation("cannot gather an empty id list".into()));
        }
        let ng = self.ng(table);
        Ok(self.push(
            Tensor::from_parts(vec![ids.len(), d], data),
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
            ng,
        ))
    }

    pub fn select_row(&mut self, x: Var, row: usize) -> Result<Var> {
        let (m, n) = self.mat_dims(x, "select_row")?;
        if row >= m {
            return Err(Error::LayoutMismatch { position: row, rows: m });
        }
        let data = self.value(x).row(row).to_vec();
        let ng = self.ng(x);
        Ok(self.push(Tensor::from_parts(vec![n], data), Op::SelectRow(x, row), ng))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (m, n) = self.mat_dims(x, "slice_cols")?;
        if len == 0 || start + len > n {
            return Err(dim_err("slice_cols", &[m, n], &[start, len]));
        }
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(m * len);
        for r in 0..m {
            data.extend_from_slice(&src[r * n + start..r * n + start + len]);
        }
        let ng = self.ng(x);
        Ok(self.push(Tensor::from_parts(vec![m, len], data), Op::SliceCols { x, start }, ng))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::Validation("concat of nothing".into()))?;
        let (m, _) = self.mat_dims(first, "concat_cols")?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (pm, pn) = self.mat_dims(p, "concat_cols")?;
            if pm != m {
                return Err(dim_err("concat_cols", self.shape(first), self.shape(p)));
            }
            widths.push(pn);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(m * total);
        for r in 0..m {
            for (&p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.value(p).data()[r * w..(r + 1) * w]);
            }
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        Ok(self.push(
            Tensor::from_parts(vec![m, total], data),
            Op::ConcatCols(parts.to_vec()),
            ng,
        ))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let (m, n) = self.mat_dims(x, "transpose")?;
        let src = self.value(x).data();
        let mut data = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                data[j * m + i] = src[i * n + j];
            }
        }
        let ng = self.ng(x);
        Ok(self.push(Tensor::from_parts(vec![n, m], data), Op::Transpose(x), ng))
    }

    /// Cosine similarity of two equally sized tensors, as a scalar node.
    pub fn cosine(&mut self, u: Var, v: Var) -> Result<Var> {
        let (a, b) = (self.value(u).data(), self.value(v).data());
        if a.len() != b.len() {
            return Err(dim_err("cosine", self.shape(u), self.shape(v)));
        }
        let norm_u = dot(a, a).sqrt();
        let norm_v = dot(b, b).sqrt();
        if norm_u == 0.0 {
            return Err(Error::DegenerateEmbedding("first cosine operand"));
        }
        if norm_v == 0.0 {
            return Err(Error::DegenerateEmbedding("second cosine operand"));
        }
        let c = dot(a, b) / (norm_u * norm_v);
        let ng = self.ng(u) || self.ng(v);
        Ok(self.push(Tensor::scalar(c), Op::Cosine { u, v, norm_u, norm_v }, ng))
    }

    /// Packs scalar nodes into a vector.
    pub fn stack(&mut self, scalars: &[Var]) -> Result<Var> {
        if scalars.is_empty() {
            return Err(Error::Validation("stack of nothing".into()));
        }
        let mut data = Vec::with_capacity(scalars.len());
        for &s in scalars {
            if self.value(s).numel() != 1 {
                return Err(dim_err("stack", self.shape(s), &[]));
            }
            data.push(self.value(s).item());
        }
        let ng = scalars.iter().any(|&s| self.ng(s));
        Ok(self.push(
            Tensor::from_parts(vec![scalars.len()], data),
            Op::Stack(scalars.to_vec()),
            ng,
        ))
    }

    /// `log Σ exp(x)` over all entries.
    pub fn log_sum_exp(&mut self, x: Var) -> Var {
        let xs = self.value(x).data();
        let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut weights: Vec<f64> = xs.iter().map(|v| (v - max).exp()).collect();
        let sum: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= sum);
        let value = max + sum.ln();
        let ng = self.ng(x);
        self.push(Tensor::scalar(value), Op::LogSumExp { x, weights }, ng)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        let ng = self.ng(x);
        self.push(Tensor::scalar(s), Op::Sum(x), ng)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let d = self.value(x).data();
        let m = d.iter().sum::<f64>() / d.len() as f64;
        let ng = self.ng(x);
        self.push(Tensor::scalar(m), Op::Mean(x), ng)
    }

    // ---- reverse pass ------------------------------------------------------

    /// Populates gradients of the scalar `loss` with respect to every node on
    /// the tape that depends on a differentiable leaf. A tape can be
    /// differentiated once.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backward_ran {
            return Err(Error::BackwardAlreadyRun);
        }
        if self.value(loss).numel() != 1 {
            return Err(Error::NonScalarRoot(self.shape(loss).to_vec()));
        }
        self.backward_ran = true;
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        self.visits.clear();
        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.visits.push(idx);
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        for (node, g) in self.nodes.iter_mut().zip(&grads) {
            if let (Op::Leaf, true, Some(g)) = (&node.op, node.value.requires_grad(), g) {
                node.value.set_grad(g.clone());
            }
        }
        self.grads = grads;
        Ok(())
    }

    fn propagate(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[idx];
        let out = node.value.data();
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            if !self.nodes[v.0].needs_grad {
                return;
            }
            let n = self.nodes[v.0].value.numel();
            let buf = grads[v.0].get_or_insert_with(|| vec![0.0; n]);
            f(buf);
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = dims2(self.shape(*a));
                let n = self.shape(*b)[1];
                let (ad, bd) = (self.value(*a).data(), self.value(*b).data());
                acc(*a, &mut |da| matmul_a_bt_acc(g, bd, da, m, n, k));
                acc(*b, &mut |db| matmul_at_b_acc(ad, g, db, m, k, n));
            }
            Op::Linear(x, w) => {
                let (m, k) = dims2(self.shape(*x));
                let n = self.shape(*w)[0];
                let (xd, wd) = (self.value(*x).data(), self.value(*w).data());
                acc(*x, &mut |dx| matmul_acc(g, wd, dx, m, n, k));
                acc(*w, &mut |dw| matmul_at_b_acc(g, xd, dw, m, n, k));
            }
            Op::Add(a, b) => {
                acc(*a, &mut |da| axpy(1.0, g, da));
                acc(*b, &mut |db| axpy(1.0, g, db));
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |da| axpy(1.0, g, da));
                acc(*b, &mut |db| axpy(-1.0, g, db));
            }
            Op::Mul(a, b) => {
                let (ad, bd) = (self.value(*a).data(), self.value(*b).data());
                acc(*a, &mut |da| {
                    for ((d, gv), bv) in da.iter_mut().zip(g).zip(bd) {
                        *d += gv * bv;
                    }
                });
                acc(*b, &mut |db| {
                    for ((d, gv), av) in db.iter_mut().zip(g).zip(ad) {
                        *d += gv * av;
                    }
                });
            }
            Op::AddRow(x, b) => {
                let n = self.value(*b).numel();
                acc(*x, &mut |dx| axpy(1.0, g, dx));
                acc(*b, &mut |db| {
                    for row in g.chunks(n) {
                        axpy(1.0, row, db);
                    }
                });
            }
            Op::Scale(x, f) => acc(*x, &mut |dx| axpy(*f, g, dx)),
            Op::Relu(x) => {
                let xd = self.value(*x).data();
                acc(*x, &mut |dx| {
                    for ((d, gv), xv) in dx.iter_mut().zip(g).zip(xd) {
                        if *xv > 0.0 {
                            *d += gv;
                        }
                    }
                });
            }
            Op::Silu(x) => {
                let xd = self.value(*x).data();
                acc(*x, &mut |dx| {
                    for ((d, gv), &xv) in dx.iter_mut().zip(g).zip(xd) {
                        let s = 1.0 / (1.0 + (-xv).exp());
                        *d += gv * s * (1.0 + xv * (1.0 - s));
                    }
                });
            }
            Op::SoftmaxRows(x) => {
                let n = node.value.cols();
                acc(*x, &mut |dx| {
                    for ((dr, gr), yr) in dx.chunks_mut(n).zip(g.chunks(n)).zip(out.chunks(n)) {
                        let s = dot(gr, yr);
                        for ((d, gv), yv) in dr.iter_mut().zip(gr).zip(yr) {
                            *d += yv * (gv - s);
                        }
                    }
                });
            }
            Op::MaskCausal(x) => {
                let n = node.value.cols();
                acc(*x, &mut |dx| {
                    for i in 0..n {
                        axpy(1.0, &g[i * n..i * n + i + 1], &mut dx[i * n..i * n + i + 1]);
                    }
                });
            }
            Op::RmsNormRows { x, gain, inv_rms } => {
                let xd = self.value(*x).data();
                let gd = self.value(*gain).data();
                let n = gd.len();
                acc(*x, &mut |dx| {
                    for (r, &ir) in inv_rms.iter().enumerate() {
                        let xr = &xd[r * n..(r + 1) * n];
                        let gr = &g[r * n..(r + 1) * n];
                        let proj: f64 = xr.iter().zip(gr).zip(gd).map(|((xv, gv), gn)| xv * gv * gn).sum();
                        let coef = ir * ir * ir * proj / n as f64;
                        for j in 0..n {
                            dx[r * n + j] += ir * gd[j] * gr[j] - coef * xr[j];
                        }
                    }
                });
                acc(*gain, &mut |dg| {
                    for (r, &ir) in inv_rms.iter().enumerate() {
                        for j in 0..n {
                            dg[j] += g[r * n + j] * xd[r * n + j] * ir;
                        }
                    }
                });
            }
            Op::Rope { x, head_dim, cos, sin } => {
                let width = node.value.cols();
                let half = head_dim / 2;
                acc(*x, &mut |dx| {
                    for r in 0..node.value.rows() {
                        let c = &cos[r * half..(r + 1) * half];
                        let s = &sin[r * half..(r + 1) * half];
                        let gr = &g[r * width..(r + 1) * width];
                        let dr = &mut dx[r * width..(r + 1) * width];
                        for (gh, dh) in gr.chunks(*head_dim).zip(dr.chunks_mut(*head_dim)) {
                            for i in 0..half {
                                let (g1, g2) = (gh[i], gh[i + half]);
                                dh[i] += g1 * c[i] + g2 * s[i];
                                dh[i + half] += -g1 * s[i] + g2 * c[i];
                            }
                        }
                    }
                });
            }
            Op::Attention {
                q,
                k,
                v,
                n_q_heads,
                n_kv_heads,
                head_dim,
                probs,
            } => self.attention_backward(g, (*q, *k, *v), (*n_q_heads, *n_kv_heads, *head_dim), probs, grads),
            Op::Gather { table, ids } => {
                let d = node.value.cols();
                acc(*table, &mut |dt| {
                    for (r, &id) in ids.iter().enumerate() {
                        axpy(1.0, &g[r * d..(r + 1) * d], &mut dt[id * d..(id + 1) * d]);
                    }
                });
            }
            Op::SelectRow(x, row) => {
                let n = g.len();
                acc(*x, &mut |dx| axpy(1.0, g, &mut dx[row * n..(row + 1) * n]));
            }
            Op::SliceCols { x, start } => {
                let len = node.value.cols();
                let n = self.value(*x).cols();
                acc(*x, &mut |dx| {
                    for (r, gr) in g.chunks(len).enumerate() {
                        axpy(1.0, gr, &mut dx[r * n + start..r * n + start + len]);
                    }
                });
            }
            Op::ConcatCols(parts) => {
                let total = node.value.cols();
                let mut offset = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    acc(p, &mut |dp| {
                        for (r, dr) in dp.chunks_mut(w).enumerate() {
                            axpy(1.0, &g[r * total + offset..r * total + offset + w], dr);
                        }
                    });
                    offset += w;
                }
            }
            Op::Transpose(x) => {
                let (m, n) = dims2(self.shape(*x));
                acc(*x, &mut |dx| {
                    for i in 0..m {
                        for j in 0..n {
                            dx[i * n + j] += g[j * m + i];
                        }
                    }
                });
            }
            Op::Cosine { u, v, norm_u, norm_v } => {
                let c = out[0];
                let gv = g[0];
                let (ud, vd) = (self.value(*u).data(), self.value(*v).data());
                let inv = 1.0 / (norm_u * norm_v);
                acc(*u, &mut |du| {
                    for ((d, a), b) in du.iter_mut().zip(ud).zip(vd) {
                        *d += gv * (b * inv - c * a / (norm_u * norm_u));
                    }
                });
                acc(*v, &mut |dv| {
                    for ((d, a), b) in dv.iter_mut().zip(ud).zip(vd) {
                        *d += gv * (a * inv - c * b / (norm_v * norm_v));
                    }
                });
            }
            Op::Stack(parts) => {
                for (&p, gv) in parts.iter().zip(g) {
                    acc(p, &mut |dp| dp[0] += gv);
                }
            }
            Op::LogSumExp { x, weights } => {
                acc(*x, &mut |dx| axpy(g[0], weights, dx));
            }
            Op::Sum(x) => acc(*x, &mut |dx| dx.iter_mut().for_each(|d| *d += g[0])),
            Op::Mean(x) => {
                let n = self.value(*x).numel() as f64;
                acc(*x, &mut |dx| dx.iter_mut().for_each(|d| *d += g[0] / n));
            }
        }
    }

    fn attention_backward(
        &self,
        g: &[f64],
        (q, k, v): (Var, Var, Var),
        (n_q_heads, n_kv_heads, head_dim): (usize, usize, usize),
        probs: &[f64],
        grads: &mut [Option<Vec<f64>>],
    ) {
        let l = self.value(q).rows();
        let qw = n_q_heads * head_dim;
        let kw = n_kv_heads * head_dim;
        let group = n_q_heads / n_kv_heads;
        let scale = 1.0 / (head_dim as f64).sqrt();
        let (qd, kd, vd) = (self.value(q).data(), self.value(k).data(), self.value(v).data());
        let mut dq = vec![0.0; l * qw];
        let mut dk = vec![0.0; l * kw];
        let mut dv = vec![0.0; l * kw];
        let mut dp = vec![0.0; l];
        for h in 0..n_q_heads {
            let kv = h / group;
            for i in 0..l {
                let p = &probs[(h * l + i) * l..(h * l + i) * l + i + 1];
                let go = &g[i * qw + h * head_dim..i * qw + (h + 1) * head_dim];
                for j in 0..=i {
                    let vj = &vd[j * kw + kv * head_dim..j * kw + (kv + 1) * head_dim];
                    dp[j] = dot(go, vj);
                    axpy(p[j], go, &mut dv[j * kw + kv * head_dim..j * kw + (kv + 1) * head_dim]);
                }
                let s: f64 = p.iter().zip(&dp[..=i]).map(|(a, b)| a * b).sum();
                let qi = &qd[i * qw + h * head_dim..i * qw + (h + 1) * head_dim];
                for j in 0..=i {
                    let ds = p[j] * (dp[j] - s) * scale;
                    if ds == 0.0 {
                        continue;
                    }
                    let kj = &kd[j * kw + kv * head_dim..j * kw + (kv + 1) * head_dim];
                    axpy(ds, kj, &mut dq[i * qw + h * head_dim..i * qw + (h + 1) * head_dim]);
                    axpy(ds, qi, &mut dk[j * kw + kv * head_dim..j * kw + (kv + 1) * head_dim]);
                }
            }
        }
        for (var, d) in [(q, dq), (k, dk), (v, dv)] {
            if self.nodes[var.0].needs_grad {
                match &mut grads[var.0] {
                    Some(buf) => axpy(1.0, &d, buf),
                    slot @ None => *slot = Some(d),
                }
            }
        }
    }
}

fn dims2(shape: &[usize]) -> (usize, usize) {
    (shape[0], shape[1])
}

/// Cosine and sine tables `[L × head_dim/2]` for rotary encoding.
pub(crate) fn rope_tables(positions: &[usize], head_dim: usize, base: f64) -> (Vec<f64>, Vec<f64>) {
    let half = head_dim / 2;
    let inv_freq: Vec<f64> = (0..half)
        .map(|i| base.powf(-2.0 * i as f64 / head_dim as f64))
        .collect();
    let mut cos = Vec::with_capacity(positions.len() * half);
    let mut sin = Vec::with_capacity(positions.len() * half);
    for &p in positions {
        for &f in &inv_freq {
            let angle = p as f64 * f;
            cos.push(angle.cos());
            sin.push(angle.sin());
        }
    }
    (cos, sin)
}
