//! Wengert tape: every differentiable op appends a node whose inputs are
//! earlier nodes, so node order is already a topological order and
//! `backward` is a single reverse sweep.

use super::gemm::{gemm, View};
use super::{Result, Scalar, Tensor, TensorError};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Additive score applied to masked-out attention keys.
pub const MASK_SCORE: f64 = -1e9;

enum Op<T> {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize),
    AddBias(usize, usize),
    Relu(usize),
    Scale(usize, T),
    MeanAll(usize),
    SumAll(usize),
    LayerNorm {
        x: usize,
        gain: usize,
        bias: usize,
        xhat: Vec<T>,
        rstd: Vec<T>,
    },
    SoftmaxRows(usize),
    CrossEntropy {
        logits: usize,
        labels: Vec<usize>,
        probs: Vec<T>,
    },
    Embedding {
        table: usize,
        ids: Vec<usize>,
    },
    Attention {
        q: usize,
        k: usize,
        v: usize,
        shape: AttnShape,
        probs: Vec<T>,
    },
    MaskedMeanPool {
        x: usize,
        mask: Vec<bool>,
        batch: usize,
        seq: usize,
    },
}

impl<T> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::AddBias(..) => "add_bias",
            Op::Relu(_) => "relu",
            Op::Scale(..) => "scale",
            Op::MeanAll(_) => "mean_all",
            Op::SumAll(_) => "sum_all",
            Op::LayerNorm { .. } => "layer_norm",
            Op::SoftmaxRows(_) => "softmax_rows",
            Op::CrossEntropy { .. } => "cross_entropy",
            Op::Embedding { .. } => "embedding",
            Op::Attention { .. } => "attention",
            Op::MaskedMeanPool { .. } => "masked_mean_pool",
        }
    }
}

#[derive(Debug, Clone)]
struct AttnShape {
    batch: usize,
    seq: usize,
    heads: usize,
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
    grad: Option<Vec<T>>,
}

/// Records a forward computation and replays it in reverse.
///
/// Leaf gradients accumulate across `backward` calls until [`Tape::zero_grads`].
pub struct Tape<T: Scalar = f32> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn mismatch(op: &'static str, left: &[usize], right: &[usize]) -> TensorError {
    TensorError::ShapeMismatch {
        op,
        left: left.to_vec(),
        right: right.to_vec(),
    }
}

fn add_into<T: Scalar>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

fn softmax_in_place<T: Scalar>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    let inv = T::one() / sum;
    for v in row.iter_mut() {
        *v *= inv;
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[usize]) -> Var {
        let requires_grad = inputs.iter().any(|&i| self.nodes[i].requires_grad);
        if cfg!(debug_assertions) && inputs.iter().all(|&i| self.nodes[i].value.is_finite()) {
            assert!(value.is_finite(), "{} produced a non-finite value", op.name());
        }
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records an input. Only leaves created with `requires_grad` receive gradients.
    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of a leaf, if any backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<Tensor<T>> {
        let node = &self.nodes[v.0];
        node.grad
            .as_ref()
            .map(|g| Tensor::new(node.value.shape().to_vec(), g.clone()).expect("grad shape"))
    }

    pub fn grad_slice(&self, v: Var) -> Option<&[T]> {
        self.nodes[v.0].grad.as_deref()
    }

    pub fn zero_grads(&mut self) {
        for node in &mut self.nodes {
            node.grad = None;
        }
    }

    /// Attention probabilities saved by an [`Tape::attention`] node, laid out
    /// as `[batch, heads, seq, seq]`.
    pub fn attention_probs(&self, v: Var) -> Option<&[T]> {
        match &self.nodes[v.0].op {
            Op::Attention { probs, .. } => Some(probs),
            _ => None,
        }
    }

    /// Which inputs of every recorded relu were positive, in tape order.
    /// Finite-difference checks compare this across perturbed forwards to
    /// skip samples whose stencil crosses a kink.
    pub fn relu_pattern(&self) -> Vec<bool> {
        self.nodes
            .iter()
            .filter(|n| matches!(n.op, Op::Relu(_)))
            .flat_map(|n| n.value.data().iter().map(|v| *v > T::zero()))
            .collect()
    }

    fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn matrix(&self, v: Var, op: &'static str) -> Result<(usize, usize)> {
        match self.shape(v) {
            [r, c] => Ok((*r, *c)),
            other => Err(mismatch(op, other, &[0, 0])),
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.matrix(a, "matmul")?;
        let (k2, n) = self.matrix(b, "matmul")?;
        if k != k2 {
            return Err(mismatch("matmul", self.shape(a), self.shape(b)));
        }
        let mut out = vec![T::zero(); m * n];
        gemm(
            m,
            k,
            n,
            T::one(),
            self.value(a).data(),
            View::rm(0, k),
            self.value(b).data(),
            View::rm(0, n),
            T::zero(),
            &mut out,
            View::rm(0, n),
        );
        let value = Tensor::new(vec![m, n], out)?;
        Ok(self.push(value, Op::MatMul(a.0, b.0), &[a.0, b.0]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(mismatch("add", self.shape(a), self.shape(b)));
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x + y)
            .collect();
        let value = Tensor::new(self.shape(a).to_vec(), data)?;
        Ok(self.push(value, Op::Add(a.0, b.0), &[a.0, b.0]))
    }

    /// `x[N×D] + bias[D]`, broadcasting the bias over rows.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (_, d) = self.matrix(x, "add_bias")?;
        if self.shape(bias) != [d] {
            return Err(mismatch("add_bias", self.shape(x), self.shape(bias)));
        }
        let b = self.value(bias).data();
        let mut data = self.value(x).data().to_vec();
        for row in data.chunks_exact_mut(d) {
            add_into(row, b);
        }
        let value = Tensor::new(self.shape(x).to_vec(), data)?;
        Ok(self.push(value, Op::AddBias(x.0, bias.0), &[x.0, bias.0]))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let data = self
            .value(x)
            .data()
            .iter()
            .map(|&v| if v > T::zero() { v } else { T::zero() })
            .collect();
        let value = Tensor::new(self.shape(x).to_vec(), data).expect("same shape");
        self.push(value, Op::Relu(x.0), &[x.0])
    }

    pub fn scale(&mut self, x: Var, c: T) -> Var {
        let data = self.value(x).data().iter().map(|&v| v * c).collect();
        let value = Tensor::new(self.shape(x).to_vec(), data).expect("same shape");
        self.push(value, Op::Scale(x.0, c), &[x.0])
    }

    pub fn mean_all(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let n = T::from_usize(t.len()).unwrap();
        let mean = t.data().iter().copied().sum::<T>() / n;
        self.push(Tensor::scalar(mean), Op::MeanAll(x.0), &[x.0])
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let sum = self.value(x).data().iter().copied().sum::<T>();
        self.push(Tensor::scalar(sum), Op::SumAll(x.0), &[x.0])
    }

    /// Row-wise layer normalization with learned gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        if !(eps > 0.0) {
            return Err(TensorError::InvalidArgument(format!("layer_norm eps {eps}")));
        }
        let (rows, d) = self.matrix(x, "layer_norm")?;
        if self.shape(gain) != [d] || self.shape(bias) != [d] {
            return Err(mismatch("layer_norm", self.shape(x), self.shape(gain)));
        }
        let eps = T::from_f64_lossy(eps);
        let dn = T::from_usize(d).unwrap();
        let g = self.value(gain).data();
        let b = self.value(bias).data();
        let mut xhat = vec![T::zero(); rows * d];
        let mut rstd = vec![T::zero(); rows];
        let mut out = vec![T::zero(); rows * d];
        for (r, row) in self.value(x).data().chunks_exact(d).enumerate() {
            let mean = row.iter().copied().sum::<T>() / dn;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / dn;
            let inv = T::one() / (var + eps).sqrt();
            rstd[r] = inv;
            for j in 0..d {
                let h = (row[j] - mean) * inv;
                xhat[r * d + j] = h;
                out[r * d + j] = h * g[j] + b[j];
            }
        }
        let value = Tensor::new(vec![rows, d], out)?;
        let op = Op::LayerNorm {
            x: x.0,
            gain: gain.0,
            bias: bias.0,
            xhat,
            rstd,
        };
        Ok(self.push(value, op, &[x.0, gain.0, bias.0]))
    }

    /// Numerically stable softmax over each row.
    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let (rows, c) = self.matrix(x, "softmax_rows")?;
        let mut data = self.value(x).data().to_vec();
        for row in data.chunks_exact_mut(c) {
            softmax_in_place(row);
        }
        let value = Tensor::new(vec![rows, c], data)?;
        Ok(self.push(value, Op::SoftmaxRows(x.0), &[x.0]))
    }

    /// Mean over rows of `-log softmax(logits)[label]`.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let (rows, c) = self.matrix(logits, "cross_entropy")?;
        if labels.len() != rows {
            return Err(mismatch("cross_entropy", self.shape(logits), &[labels.len()]));
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= c) {
            return Err(TensorError::LabelOutOfRange { label, classes: c });
        }
        let mut probs = self.value(logits).data().to_vec();
        let mut total = T::zero();
        for (row, &label) in probs.chunks_exact_mut(c).zip(labels) {
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = row.iter().map(|&v| (v - max).exp()).sum::<T>().ln() + max;
            total += lse - row[label];
            for v in row.iter_mut() {
                *v = (*v - lse).exp();
            }
        }
        let loss = total / T::from_usize(rows).unwrap();
        let op = Op::CrossEntropy {
            logits: logits.0,
            labels: labels.to_vec(),
            probs,
        };
        Ok(self.push(Tensor::scalar(loss), op, &[logits.0]))
    }

    /// Gathers rows of `table[V×D]`.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (rows, d) = self.matrix(table, "embedding")?;
        if let Some(&index) = ids.iter().find(|&&i| i >= rows) {
            return Err(TensorError::IndexOutOfRange { index, rows });
        }
        if ids.is_empty() {
            return Err(TensorError::InvalidShape(vec![0, d]));
        }
        let t = self.value(table);
        let mut data = Vec::with_capacity(ids.len() * d);
        for &i in ids {
            data.extend_from_slice(t.row(i));
        }
        let value = Tensor::new(vec![ids.len(), d], data)?;
        let op = Op::Embedding {
            table: table.0,
            ids: ids.to_vec(),
        };
        Ok(self.push(value, op, &[table.0]))
    }

    /// Multi-head scaled dot-product attention.
    ///
    /// `q`, `k` and `v` are `[batch·seq, d_model]` with rows grouped by
    /// sequence; `mask` has one entry per row and `false` keys receive an
    /// additive [`MASK_SCORE`] before the softmax. Scores are scaled by
    /// `1/√(d_model/heads)`.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, mask: &[bool], batch: usize, heads: usize) -> Result<Var> {
        let (rows, d) = self.matrix(q, "attention")?;
        if self.shape(k) != [rows, d] || self.shape(v) != [rows, d] {
            return Err(mismatch("attention", self.shape(q), self.shape(k)));
        }
        if batch == 0 || rows % batch != 0 || mask.len() != rows {
            return Err(mismatch("attention", &[rows, d], &[batch, mask.len()]));
        }
        if heads == 0 || d % heads != 0 {
            return Err(TensorError::InvalidArgument(format!(
                "{heads} heads do not divide d_model {d}"
            )));
        }
        let seq = rows / batch;
        let dh = d / heads;
        let scale = T::from_f64_lossy(1.0 / (dh as f64).sqrt());
        let masked = T::from_f64_lossy(MASK_SCORE);
        let (qd, kd, vd) = (self.value(q).data(), self.value(k).data(), self.value(v).data());
        let mut probs = vec![T::zero(); batch * heads * seq * seq];
        let mut out = vec![T::zero(); rows * d];
        for b in 0..batch {
            for h in 0..heads {
                let off = b * seq * d + h * dh;
                let p = &mut probs[(b * heads + h) * seq * seq..][..seq * seq];
                gemm(
                    seq,
                    dh,
                    seq,
                    scale,
                    qd,
                    View::rm(off, d),
                    kd,
                    View::tr(off, d),
                    T::zero(),
                    p,
                    View::rm(0, seq),
                );
                for row in p.chunks_exact_mut(seq) {
                    for (j, s) in row.iter_mut().enumerate() {
                        if !mask[b * seq + j] {
                            *s += masked;
                        }
                    }
                    softmax_in_place(row);
                }
                gemm(
                    seq,
                    seq,
                    dh,
                    T::one(),
                    p,
                    View::rm(0, seq),
                    vd,
                    View::rm(off, d),
                    T::zero(),
                    &mut out,
                    View::rm(off, d),
                );
            }
        }
        let value = Tensor::new(vec![rows, d], out)?;
        let op = Op::Attention {
            q: q.0,
            k: k.0,
            v: v.0,
            shape: AttnShape { batch, seq, heads },
            probs,
        };
        Ok(self.push(value, op, &[q.0, k.0, v.0]))
    }

    /// Averages each sequence's rows over positions where `mask` is true.
    /// A sequence with no unmasked position pools to zero.
    pub fn masked_mean_pool(&mut self, x: Var, mask: &[bool], batch: usize) -> Result<Var> {
        let (rows, d) = self.matrix(x, "masked_mean_pool")?;
        if batch == 0 || rows % batch != 0 || mask.len() != rows {
            return Err(mismatch("masked_mean_pool", &[rows, d], &[batch, mask.len()]));
        }
        let seq = rows / batch;
        let xd = self.value(x).data();
        let mut out = vec![T::zero(); batch * d];
        for b in 0..batch {
            let count = mask[b * seq..(b + 1) * seq].iter().filter(|&&m| m).count();
            if count == 0 {
                continue;
            }
            let inv = T::one() / T::from_usize(count).unwrap();
            let dst = &mut out[b * d..(b + 1) * d];
            for l in 0..seq {
                if mask[b * seq + l] {
                    add_into(dst, &xd[(b * seq + l) * d..][..d]);
                }
            }
            for v in dst.iter_mut() {
                *v *= inv;
            }
        }
        let value = Tensor::new(vec![batch, d], out)?;
        let op = Op::MaskedMeanPool {
            x: x.0,
            mask: mask.to_vec(),
            batch,
            seq,
        };
        Ok(self.push(value, op, &[x.0]))
    }

    /// Backpropagates from a scalar `loss`, accumulating into leaf gradients.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.shape(loss) != [1] {
            return Err(TensorError::NotScalar(self.shape(loss).to_vec()));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
        }
        for (node, g) in self.nodes.iter_mut().zip(grads) {
            if let (Op::Leaf, true, Some(g)) = (&node.op, node.requires_grad, g) {
                match &mut node.grad {
                    Some(acc) => add_into(acc, &g),
                    None => node.grad = Some(g),
                }
            }
        }
        Ok(())
    }

    /// Takes the gradient buffer of input `i`, or `None` if `i` needs no gradient.
    fn take_buf(&self, grads: &mut [Option<Vec<T>>], i: usize) -> Option<Vec<T>> {
        if !self.nodes[i].requires_grad {
            return None;
        }
        Some(
            grads[i]
                .take()
                .unwrap_or_else(|| vec![T::zero(); self.nodes[i].value.len()]),
        )
    }

    fn accumulate(&self, grads: &mut [Option<Vec<T>>], i: usize, f: impl FnOnce(&mut [T])) {
        if let Some(mut buf) = self.take_buf(grads, i) {
            f(&mut buf);
            grads[i] = Some(buf);
        }
    }

    fn propagate(&self, i: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let val = |j: usize| self.nodes[j].value.data();
        match &self.nodes[i].op {
            Op::Leaf => {}
            &Op::MatMul(a, b) => {
                let (m, k) = self.nodes[a].value.dims2();
                let n = self.nodes[b].value.dims2().1;
                self.accumulate(grads, a, |da| {
                    gemm(
                        m,
                        n,
                        k,
                        T::one(),
                        g,
                        View::rm(0, n),
                        val(b),
                        View::tr(0, n),
                        T::one(),
                        da,
                        View::rm(0, k),
                    );
                });
                self.accumulate(grads, b, |db| {
                    gemm(
                        k,
                        m,
                        n,
                        T::one(),
                        val(a),
                        View::tr(0, k),
                        g,
                        View::rm(0, n),
                        T::one(),
                        db,
                        View::rm(0, n),
                    );
                });
            }
            &Op::Add(a, b) => {
                self.accumulate(grads, a, |da| add_into(da, g));
                self.accumulate(grads, b, |db| add_into(db, g));
            }
            &Op::AddBias(x, bias) => {
                self.accumulate(grads, x, |dx| add_into(dx, g));
                self.accumulate(grads, bias, |db| {
                    for row in g.chunks_exact(db.len()) {
                        add_into(db, row);
                    }
                });
            }
            &Op::Relu(x) => {
                self.accumulate(grads, x, |dx| {
                    for ((d, &gv), &xv) in dx.iter_mut().zip(g).zip(val(x)) {
                        if xv > T::zero() {
                            *d += gv;
                        }
                    }
                });
            }
            &Op::Scale(x, c) => {
                self.accumulate(grads, x, |dx| {
                    for (d, &gv) in dx.iter_mut().zip(g) {
                        *d += gv * c;
                    }
                });
            }
            &Op::MeanAll(x) => {
                self.accumulate(grads, x, |dx| {
                    let share = g[0] / T::from_usize(dx.len()).unwrap();
                    dx.iter_mut().for_each(|d| *d += share);
                });
            }
            &Op::SumAll(x) => {
                self.accumulate(grads, x, |dx| dx.iter_mut().for_each(|d| *d += g[0]));
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            } => {
                let d = xhat.len() / rstd.len();
                self.accumulate(grads, *gain, |dg| {
                    for (gr, hr) in g.chunks_exact(d).zip(xhat.chunks_exact(d)) {
                        for j in 0..d {
                            dg[j] += gr[j] * hr[j];
                        }
                    }
                });
                self.accumulate(grads, *bias, |db| {
                    for gr in g.chunks_exact(d) {
                        add_into(db, gr);
                    }
                });
                let gain_v = val(*gain);
                self.accumulate(grads, *x, |dx| {
                    let dn = T::from_usize(d).unwrap();
                    for (r, (gr, hr)) in g.chunks_exact(d).zip(xhat.chunks_exact(d)).enumerate() {
                        let mut mean_dh = T::zero();
                        let mut mean_dh_h = T::zero();
                        for j in 0..d {
                            let dh = gr[j] * gain_v[j];
                            mean_dh += dh;
                            mean_dh_h += dh * hr[j];
                        }
                        mean_dh = mean_dh / dn;
                        mean_dh_h = mean_dh_h / dn;
                        let out = &mut dx[r * d..(r + 1) * d];
                        for j in 0..d {
                            let dh = gr[j] * gain_v[j];
                            out[j] += rstd[r] * (dh - mean_dh - hr[j] * mean_dh_h);
                        }
                    }
                });
            }
            &Op::SoftmaxRows(x) => {
                let y = self.nodes[i].value.data();
                let c = self.nodes[i].value.dims2().1;
                self.accumulate(grads, x, |dx| {
                    for ((dr, gr), yr) in dx.chunks_exact_mut(c).zip(g.chunks_exact(c)).zip(y.chunks_exact(c)) {
                        let dot: T = gr.iter().zip(yr).map(|(&a, &b)| a * b).sum();
                        for j in 0..c {
                            dr[j] += yr[j] * (gr[j] - dot);
                        }
                    }
                });
            }
            Op::CrossEntropy { logits, labels, probs } => {
                let rows = labels.len();
                let c = probs.len() / rows;
                let coef = g[0] / T::from_usize(rows).unwrap();
                self.accumulate(grads, *logits, |dl| {
                    for (r, &label) in labels.iter().enumerate() {
                        for j in 0..c {
                            let onehot = if j == label { T::one() } else { T::zero() };
                            dl[r * c + j] += coef * (probs[r * c + j] - onehot);
                        }
                    }
                });
            }
            Op::Embedding { table, ids } => {
                let d = self.nodes[*table].value.dims2().1;
                self.accumulate(grads, *table, |dt| {
                    for (r, &id) in ids.iter().enumerate() {
                        add_into(&mut dt[id * d..(id + 1) * d], &g[r * d..(r + 1) * d]);
                    }
                });
            }
            Op::Attention { q, k, v, shape, probs } => self.attention_backward(*q, *k, *v, shape, probs, g, grads),
            Op::MaskedMeanPool { x, mask, batch, seq } => {
                let d = self.nodes[i].value.dims2().1;
                self.accumulate(grads, *x, |dx| {
                    for b in 0..*batch {
                        let m = &mask[b * seq..(b + 1) * seq];
                        let count = m.iter().filter(|&&v| v).count();
                        if count == 0 {
                            continue;
                        }
                        let inv = T::one() / T::from_usize(count).unwrap();
                        let gb = &g[b * d..(b + 1) * d];
                        for (l, _) in m.iter().enumerate().filter(|(_, &v)| v) {
                            let dst = &mut dx[(b * seq + l) * d..][..d];
                            for (o, &gv) in dst.iter_mut().zip(gb) {
                                *o += gv * inv;
                            }
                        }
                    }
                });
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn attention_backward(
        &self,
        q: usize,
        k: usize,
        v: usize,
        shape: &AttnShape,
        probs: &[T],
        g: &[T],
        grads: &mut [Option<Vec<T>>],
    ) {
        let (rows, d) = self.nodes[q].value.dims2();
        let AttnShape { batch, seq, heads, .. } = *shape;
        let dh = d / heads;
        let scale = T::from_f64_lossy(1.0 / (dh as f64).sqrt());
        let (qd, kd, vd) = (
            self.nodes[q].value.data(),
            self.nodes[k].value.data(),
            self.nodes[v].value.data(),
        );
        let mut dq = vec![T::zero(); rows * d];
        let mut dk = vec![T::zero(); rows * d];
        let mut dv = vec![T::zero(); rows * d];
        let mut ds = vec![T::zero(); seq * seq];
        for b in 0..batch {
            for h in 0..heads {
                let off = b * seq * d + h * dh;
                let p = &probs[(b * heads + h) * seq * seq..][..seq * seq];
                // dP = dO·Vᵀ
                gemm(
                    seq,
                    dh,
                    seq,
                    T::one(),
                    g,
                    View::rm(off, d),
                    vd,
                    View::tr(off, d),
                    T::zero(),
                    &mut ds,
                    View::rm(0, seq),
                );
                // dV += Pᵀ·dO
                gemm(
                    seq,
                    seq,
                    dh,
                    T::one(),
                    p,
                    View::tr(0, seq),
                    g,
                    View::rm(off, d),
                    T::one(),
                    &mut dv,
                    View::rm(off, d),
                );
                for (dr, pr) in ds.chunks_exact_mut(seq).zip(p.chunks_exact(seq)) {
                    let dot: T = dr.iter().zip(pr).map(|(&a, &b)| a * b).sum();
                    for (x, &pv) in dr.iter_mut().zip(pr) {
                        *x = pv * (*x - dot);
                    }
                }
                gemm(
                    seq,
                    seq,
                    dh,
                    scale,
                    &ds,
                    View::rm(0, seq),
                    kd,
                    View::rm(off, d),
                    T::one(),
                    &mut dq,
                    View::rm(off, d),
                );
                gemm(
                    seq,
                    seq,
                    dh,
                    scale,
                    &ds,
                    View::tr(0, seq),
                    qd,
                    View::rm(off, d),
                    T::one(),
                    &mut dk,
                    View::rm(off, d),
                );
            }
        }
        self.accumulate(grads, q, |buf| add_into(buf, &dq));
        self.accumulate(grads, k, |buf| add_into(buf, &dk));
        self.accumulate(grads, v, |buf| add_into(buf, &dv));
    }
}
