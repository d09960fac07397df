//! Tape-based reverse-mode differentiation.
//!
//! Nodes are appended in evaluation order, so the tape is already a
//! topological order and `backward` walks it once in reverse.

use super::params::ParamStore;
use super::tensor::{dot, gelu, gelu_grad, gemm, gemm_nt, gemm_tn, sigmoid, softmax_in_place, Real, Tensor};
use super::NumericError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

/// How query and key rows are grouped into independent attention problems.
///
/// Query `i` of group `g` lives at row `g * q_group_stride + i * q_seq_stride`
/// and key `j` at `g * k_group_stride + j * k_seq_stride`. A key group stride
/// of zero shares one key set across all groups.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AttentionLayout {
    pub heads: usize,
    pub groups: usize,
    pub q_len: usize,
    pub q_group_stride: usize,
    pub q_seq_stride: usize,
    pub k_len: usize,
    pub k_group_stride: usize,
    pub k_seq_stride: usize,
}

impl AttentionLayout {
    /// `groups` contiguous sequences of `len` rows attending within themselves.
    pub fn contiguous(heads: usize, groups: usize, len: usize) -> Self {
        Self {
            heads,
            groups,
            q_len: len,
            q_group_stride: len,
            q_seq_stride: 1,
            k_len: len,
            k_group_stride: len,
            k_seq_stride: 1,
        }
    }

    fn q_row(&self, g: usize, i: usize) -> usize {
        g * self.q_group_stride + i * self.q_seq_stride
    }

    fn k_row(&self, g: usize, j: usize) -> usize {
        g * self.k_group_stride + j * self.k_seq_stride
    }
}

enum Op<R> {
    Input,
    Param(usize),
    MatMul(NodeId, NodeId),
    Affine {
        x: NodeId,
        w: NodeId,
        b: NodeId,
    },
    Add(NodeId, NodeId),
    AddConst(NodeId),
    Scale(NodeId, R),
    Mul(NodeId, Tensor<R>),
    LayerNorm {
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        xhat: Vec<R>,
        rstd: Vec<R>,
    },
    Gelu(NodeId),
    Attention {
        q: NodeId,
        k: NodeId,
        v: NodeId,
        layout: AttentionLayout,
        probs: Vec<R>,
    },
    Reshape(NodeId),
    MeanPool {
        x: NodeId,
        outer: usize,
        len: usize,
        inner: usize,
    },
    MaxPool {
        x: NodeId,
        outer: usize,
        len: usize,
        inner: usize,
        argmax: Vec<u32>,
    },
    Concat {
        parts: Vec<NodeId>,
        outer: usize,
        chunks: Vec<usize>,
    },
    Rows {
        x: NodeId,
        start: usize,
    },
    Cols {
        x: NodeId,
        start: usize,
        width: usize,
    },
    Sum(NodeId),
    WeightedSum(Vec<(NodeId, R)>),
    L1 {
        pred: NodeId,
        target: Vec<R>,
        weight: Vec<R>,
    },
    SoftmaxCe {
        logits: NodeId,
        target: Vec<R>,
        weight: Vec<R>,
        probs: Vec<R>,
    },
    BceLogits {
        logits: NodeId,
        target: Vec<R>,
        weight: Vec<R>,
    },
}

struct Node<R> {
    value: Tensor<R>,
    op: Op<R>,
}

/// Points where the loss is not differentiable are tracked so that the
/// finite-difference checker can tell when a perturbation crossed one.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct KinkSignature(Vec<i8>, Vec<u32>);

pub struct Graph<R: Real = f32> {
    nodes: Vec<Node<R>>,
}

impl<R: Real> Default for Graph<R> {
    fn default() -> Self {
        Self::new()
    }
}

fn mismatch<R: Real>(op: &'static str, a: &Tensor<R>, b: &Tensor<R>) -> NumericError {
    NumericError::ShapeMismatch {
        op,
        left: a.shape().to_vec(),
        right: b.shape().to_vec(),
    }
}

fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

impl<R: Real> Graph<R> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor<R> {
        &self.nodes[id.0].value
    }

    fn push(&mut self, value: Tensor<R>, op: Op<R>) -> NodeId {
        self.nodes.push(Node { value, op });
        NodeId(self.nodes.len() - 1)
    }

    /// A constant leaf. Receives no gradient.
    pub fn input(&mut self, t: Tensor<R>) -> NodeId {
        self.push(t, Op::Input)
    }

    /// A trainable leaf bound to `store[name]`.
    pub fn param(&mut self, store: &ParamStore<R>, name: &str) -> Result<NodeId, NumericError> {
        let idx = store
            .index_of(name)
            .ok_or_else(|| NumericError::MissingParam(name.to_string()))?;
        Ok(self.push(store.tensor(idx).clone(), Op::Param(idx)))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NumericError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape().len() != 2 || tb.shape().len() != 2 || ta.shape()[1] != tb.shape()[0] {
            return Err(mismatch("matmul", ta, tb));
        }
        let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
        let mut out = vec![R::zero(); m * n];
        gemm(ta.data(), tb.data(), &mut out, m, k, n);
        let t = Tensor::new(&[m, n], out)?;
        Ok(self.push(t, Op::MatMul(a, b)))
    }

    /// `x · w + b` with `x: [..., k]`, `w: [k, n]`, `b: [n]`.
    pub fn affine(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId, NumericError> {
        let (tx, tw, tb) = (self.value(x), self.value(w), self.value(b));
        let (m, k) = tx.matrix_dims();
        if tw.shape().len() != 2 || tw.shape()[0] != k {
            return Err(mismatch("affine", tx, tw));
        }
        let n = tw.shape()[1];
        if tb.shape() != [n] {
            return Err(mismatch("affine bias", tw, tb));
        }
        let mut out = Vec::with_capacity(m * n);
        for _ in 0..m {
            out.extend_from_slice(tb.data());
        }
        gemm(tx.data(), tw.data(), &mut out, m, k, n);
        let mut shape = tx.shape().to_vec();
        *shape.last_mut().expect("affine input has rank >= 1") = n;
        let t = Tensor::new(&shape, out)?;
        Ok(self.push(t, Op::Affine { x, w, b }))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NumericError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(mismatch("add", ta, tb));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| x + y).collect();
        let t = Tensor::new(ta.shape(), data)?;
        Ok(self.push(t, Op::Add(a, b)))
    }

    /// Adds a constant tensor of the same shape.
    pub fn add_const(&mut self, a: NodeId, c: &Tensor<R>) -> Result<NodeId, NumericError> {
        let ta = self.value(a);
        if ta.shape() != c.shape() {
            return Err(mismatch("add_const", ta, c));
        }
        let data = ta.data().iter().zip(c.data()).map(|(&x, &y)| x + y).collect();
        let t = Tensor::new(ta.shape(), data)?;
        Ok(self.push(t, Op::AddConst(a)))
    }

    pub fn scale(&mut self, a: NodeId, s: R) -> NodeId {
        let ta = self.value(a);
        let data = ta.data().iter().map(|&x| x * s).collect();
        let t = Tensor::new(ta.shape(), data).expect("same shape");
        self.push(t, Op::Scale(a, s))
    }

    /// Elementwise product with a constant tensor.
    pub fn mul_const(&mut self, a: NodeId, c: Tensor<R>) -> Result<NodeId, NumericError> {
        let ta = self.value(a);
        if ta.shape() != c.shape() {
            return Err(mismatch("mul_const", ta, &c));
        }
        let data = ta.data().iter().zip(c.data()).map(|(&x, &y)| x * y).collect();
        let t = Tensor::new(ta.shape(), data)?;
        Ok(self.push(t, Op::Mul(a, c)))
    }

    /// Normalizes over the last axis.
    pub fn layer_norm(&mut self, x: NodeId, gamma: NodeId, beta: NodeId) -> Result<NodeId, NumericError> {
        let (tx, tg, tb) = (self.value(x), self.value(gamma), self.value(beta));
        let (m, n) = tx.matrix_dims();
        if tg.shape() != [n] || tb.shape() != [n] {
            return Err(mismatch("layer_norm", tx, tg));
        }
        let eps = R::of(1e-5);
        let nf = R::of(n as f64);
        let mut out = vec![R::zero(); m * n];
        let mut xhat = vec![R::zero(); m * n];
        let mut rstd = vec![R::zero(); m];
        for i in 0..m {
            let row = &tx.data()[i * n..(i + 1) * n];
            let mean = row.iter().copied().sum::<R>() / nf;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<R>() / nf;
            let r = R::one() / (var + eps).sqrt();
            rstd[i] = r;
            for j in 0..n {
                let h = (row[j] - mean) * r;
                xhat[i * n + j] = h;
                out[i * n + j] = h * tg.data()[j] + tb.data()[j];
            }
        }
        let t = Tensor::new(tx.shape(), out)?;
        Ok(self.push(
            t,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            },
        ))
    }

    pub fn gelu(&mut self, x: NodeId) -> NodeId {
        let tx = self.value(x);
        let data = tx.data().iter().map(|&v| gelu(v)).collect();
        let t = Tensor::new(tx.shape(), data).expect("same shape");
        self.push(t, Op::Gelu(x))
    }

    /// Multi-head scaled dot-product attention with row-max stabilized
    /// softmax. `q`, `k`, `v` are `[rows, width]` with the width split evenly
    /// across heads. `key_mask[row] == false` excludes a key; a query with no
    /// admissible key produces a zero row.
    pub fn attention(
        &mut self,
        q: NodeId,
        k: NodeId,
        v: NodeId,
        layout: AttentionLayout,
        key_mask: Option<&[bool]>,
    ) -> Result<NodeId, NumericError> {
        let (tq, tk, tv) = (self.value(q), self.value(k), self.value(v));
        let (qr, width) = tq.matrix_dims();
        let (kr, kw) = tk.matrix_dims();
        if kw != width || tv.matrix_dims() != (kr, width) {
            return Err(mismatch("attention", tq, tk));
        }
        let h = layout.heads;
        if h == 0 || width % h != 0 {
            return Err(NumericError::InvalidArgument(format!(
                "width {width} not divisible by {h} heads"
            )));
        }
        let last = |g: usize, len: usize, gs: usize, ss: usize| {
            if g == 0 || len == 0 {
                0
            } else {
                (g - 1) * gs + (len - 1) * ss + 1
            }
        };
        let kg = if layout.k_group_stride == 0 { 1 } else { layout.groups };
        if last(layout.groups, layout.q_len, layout.q_group_stride, layout.q_seq_stride) > qr
            || last(kg, layout.k_len, layout.k_group_stride, layout.k_seq_stride) > kr
            || key_mask.is_some_and(|m| m.len() != kr)
        {
            return Err(NumericError::InvalidArgument(format!(
                "attention layout {layout:?} out of bounds for {qr} query / {kr} key rows"
            )));
        }
        let dh = width / h;
        let scale = R::one() / R::of(dh as f64).sqrt();
        let (lq, lk) = (layout.q_len, layout.k_len);
        let mut probs = vec![R::zero(); layout.groups * h * lq * lk];
        let mut out = vec![R::zero(); qr * width];
        let (qd, kd, vd) = (tq.data(), tk.data(), tv.data());
        for g in 0..layout.groups {
            for head in 0..h {
                let off = head * dh;
                for i in 0..lq {
                    let qrow = layout.q_row(g, i);
                    let qs = &qd[qrow * width + off..qrow * width + off + dh];
                    let base = ((g * h + head) * lq + i) * lk;
                    let p = &mut probs[base..base + lk];
                    for (j, pj) in p.iter_mut().enumerate() {
                        let krow = layout.k_row(g, j);
                        *pj = if key_mask.is_none_or(|m| m[krow]) {
                            dot(qs, &kd[krow * width + off..krow * width + off + dh]) * scale
                        } else {
                            R::neg_infinity()
                        };
                    }
                    softmax_in_place(p);
                    let o = &mut out[qrow * width + off..qrow * width + off + dh];
                    for (j, &pj) in p.iter().enumerate() {
                        if pj == R::zero() {
                            continue;
                        }
                        let krow = layout.k_row(g, j);
                        let vs = &vd[krow * width + off..krow * width + off + dh];
                        for (ov, &vv) in o.iter_mut().zip(vs) {
                            *ov = *ov + pj * vv;
                        }
                    }
                }
            }
        }
        let t = Tensor::new(tq.shape(), out)?;
        Ok(self.push(
            t,
            Op::Attention {
                q,
                k,
                v,
                layout,
                probs,
            },
        ))
    }

    pub fn reshape(&mut self, x: NodeId, shape: &[usize]) -> Result<NodeId, NumericError> {
        let t = self.value(x).clone().reshaped(shape)?;
        Ok(self.push(t, Op::Reshape(x)))
    }

    /// Mean over `axis`; the axis is removed from the shape.
    pub fn mean_pool(&mut self, x: NodeId, axis: usize) -> Result<NodeId, NumericError> {
        let tx = self.value(x);
        if axis >= tx.shape().len() || tx.shape()[axis] == 0 {
            return Err(NumericError::InvalidArgument(format!(
                "mean_pool axis {axis} invalid for shape {:?}",
                tx.shape()
            )));
        }
        let (outer, len, inner) = axis_split(tx.shape(), axis);
        let inv = R::one() / R::of(len as f64);
        let mut out = vec![R::zero(); outer * inner];
        for o in 0..outer {
            for l in 0..len {
                let src = &tx.data()[(o * len + l) * inner..(o * len + l + 1) * inner];
                for (d, &s) in out[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                    *d = *d + s * inv;
                }
            }
        }
        let mut shape = tx.shape().to_vec();
        shape.remove(axis);
        let t = Tensor::new(&shape, out)?;
        Ok(self.push(t, Op::MeanPool { x, outer, len, inner }))
    }

    /// Max over `axis`; ties resolve to the first index.
    pub fn max_pool(&mut self, x: NodeId, axis: usize) -> Result<NodeId, NumericError> {
        let tx = self.value(x);
        if axis >= tx.shape().len() || tx.shape()[axis] == 0 {
            return Err(NumericError::InvalidArgument(format!(
                "max_pool axis {axis} invalid for shape {:?}",
                tx.shape()
            )));
        }
        let (outer, len, inner) = axis_split(tx.shape(), axis);
        let mut out = vec![R::neg_infinity(); outer * inner];
        let mut argmax = vec![0u32; outer * inner];
        for o in 0..outer {
            for l in 0..len {
                let src = &tx.data()[(o * len + l) * inner..(o * len + l + 1) * inner];
                for (c, &s) in src.iter().enumerate() {
                    let d = o * inner + c;
                    if s > out[d] {
                        out[d] = s;
                        argmax[d] = l as u32;
                    }
                }
            }
        }
        let mut shape = tx.shape().to_vec();
        shape.remove(axis);
        let t = Tensor::new(&shape, out)?;
        Ok(self.push(
            t,
            Op::MaxPool {
                x,
                outer,
                len,
                inner,
                argmax,
            },
        ))
    }

    pub fn concat(&mut self, parts: &[NodeId], axis: usize) -> Result<NodeId, NumericError> {
        let first = self.value(parts[0]).shape().to_vec();
        if axis >= first.len() {
            return Err(NumericError::InvalidArgument(format!(
                "concat axis {axis} invalid for shape {first:?}"
            )));
        }
        let mut total = 0;
        for &p in parts {
            let s = self.value(p).shape();
            let same_rank = s.len() == first.len();
            if !same_rank || s[..axis] != first[..axis] || s[axis + 1..] != first[axis + 1..] {
                return Err(mismatch("concat", self.value(parts[0]), self.value(p)));
            }
            total += s[axis];
        }
        let (outer, _, inner) = axis_split(&first, axis);
        let chunks: Vec<usize> = parts.iter().map(|&p| self.value(p).shape()[axis] * inner).collect();
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (&p, &c) in parts.iter().zip(&chunks) {
                out.extend_from_slice(&self.value(p).data()[o * c..(o + 1) * c]);
            }
        }
        let mut shape = first;
        shape[axis] = total;
        let t = Tensor::new(&shape, out)?;
        Ok(self.push(
            t,
            Op::Concat {
                parts: parts.to_vec(),
                outer,
                chunks,
            },
        ))
    }

    /// Rows `start..start + len` of a matrix.
    pub fn rows(&mut self, x: NodeId, start: usize, len: usize) -> Result<NodeId, NumericError> {
        let tx = self.value(x);
        let (m, n) = tx.matrix_dims();
        if tx.shape().len() != 2 || start + len > m {
            return Err(NumericError::InvalidArgument(format!(
                "rows {start}..{} out of range for {:?}",
                start + len,
                tx.shape()
            )));
        }
        let t = Tensor::new(&[len, n], tx.data()[start * n..(start + len) * n].to_vec())?;
        Ok(self.push(t, Op::Rows { x, start }))
    }

    /// Columns `start..start + width` of a matrix.
    pub fn cols(&mut self, x: NodeId, start: usize, width: usize) -> Result<NodeId, NumericError> {
        let tx = self.value(x);
        let (m, n) = tx.matrix_dims();
        if tx.shape().len() != 2 || start + width > n {
            return Err(NumericError::InvalidArgument(format!(
                "cols {start}..{} out of range for {:?}",
                start + width,
                tx.shape()
            )));
        }
        let mut out = Vec::with_capacity(m * width);
        for i in 0..m {
            out.extend_from_slice(&tx.data()[i * n + start..i * n + start + width]);
        }
        let t = Tensor::new(&[m, width], out)?;
        Ok(self.push(t, Op::Cols { x, start, width }))
    }

    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let s = self.value(x).data().iter().copied().sum();
        self.push(Tensor::scalar(s), Op::Sum(x))
    }

    /// `Σ c_i · x_i` over scalar nodes.
    pub fn weighted_sum(&mut self, terms: &[(NodeId, R)]) -> Result<NodeId, NumericError> {
        let mut s = R::zero();
        for &(id, c) in terms {
            let t = self.value(id);
            if t.len() != 1 {
                return Err(NumericError::NonScalar(t.shape().to_vec()));
            }
            s = s + c * t.item();
        }
        Ok(self.push(Tensor::scalar(s), Op::WeightedSum(terms.to_vec())))
    }

    /// `Σ w · |pred − target|`.
    pub fn l1(&mut self, pred: NodeId, target: Vec<R>, weight: Vec<R>) -> Result<NodeId, NumericError> {
        let tp = self.value(pred);
        if target.len() != tp.len() || weight.len() != tp.len() {
            return Err(NumericError::ShapeMismatch {
                op: "l1",
                left: tp.shape().to_vec(),
                right: vec![target.len(), weight.len()],
            });
        }
        let s = tp
            .data()
            .iter()
            .zip(&target)
            .zip(&weight)
            .map(|((&p, &t), &w)| w * (p - t).abs())
            .sum();
        Ok(self.push(Tensor::scalar(s), Op::L1 { pred, target, weight }))
    }

    /// `Σ_i w_i · CE(softmax(logits_i), target_i)` for `logits: [m, c]`,
    /// `target: [m, c]` (probability rows) and `weight: [m]`.
    pub fn softmax_cross_entropy(
        &mut self,
        logits: NodeId,
        target: Vec<R>,
        weight: Vec<R>,
    ) -> Result<NodeId, NumericError> {
        let tl = self.value(logits);
        let (m, c) = tl.matrix_dims();
        if target.len() != m * c || weight.len() != m {
            return Err(NumericError::ShapeMismatch {
                op: "softmax_cross_entropy",
                left: tl.shape().to_vec(),
                right: vec![target.len(), weight.len()],
            });
        }
        let mut probs = tl.data().to_vec();
        let mut s = R::zero();
        for i in 0..m {
            let row = &tl.data()[i * c..(i + 1) * c];
            let max = row.iter().fold(R::neg_infinity(), |a, &b| a.max(b));
            let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<R>().ln();
            if weight[i] != R::zero() {
                let ce: R = (0..c)
                    .filter(|&j| target[i * c + j] != R::zero())
                    .map(|j| target[i * c + j] * (lse - row[j]))
                    .sum();
                s = s + weight[i] * ce;
            }
            softmax_in_place(&mut probs[i * c..(i + 1) * c]);
        }
        Ok(self.push(
            Tensor::scalar(s),
            Op::SoftmaxCe {
                logits,
                target,
                weight,
                probs,
            },
        ))
    }

    /// `Σ w · BCE(sigmoid(logit), target)`, evaluated stably from logits.
    pub fn bce_with_logits(&mut self, logits: NodeId, target: Vec<R>, weight: Vec<R>) -> Result<NodeId, NumericError> {
        let tl = self.value(logits);
        if target.len() != tl.len() || weight.len() != tl.len() {
            return Err(NumericError::ShapeMismatch {
                op: "bce_with_logits",
                left: tl.shape().to_vec(),
                right: vec![target.len(), weight.len()],
            });
        }
        let s = tl
            .data()
            .iter()
            .zip(&target)
            .zip(&weight)
            .map(|((&x, &y), &w)| w * (x.max(R::zero()) - x * y + (-x.abs()).exp().ln_1p()))
            .sum();
        Ok(self.push(Tensor::scalar(s), Op::BceLogits { logits, target, weight }))
    }

    /// Sign pattern of every L1 residual and the winner of every max-pool.
    pub fn kink_signature(&self) -> KinkSignature {
        let mut signs = Vec::new();
        let mut winners = Vec::new();
        for node in &self.nodes {
            match &node.op {
                Op::L1 { pred, target, weight } => {
                    for ((&p, &t), &w) in self.value(*pred).data().iter().zip(target).zip(weight) {
                        if w != R::zero() {
                            signs.push(sign(p - t).as_f64() as i8);
                        }
                    }
                }
                Op::MaxPool { argmax, .. } => winners.extend_from_slice(argmax),
                _ => {}
            }
        }
        KinkSignature(signs, winners)
    }

    /// Reverse sweep from a scalar loss.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients<R>, NumericError> {
        let lt = self.value(loss);
        if lt.len() != 1 {
            return Err(NumericError::NonScalar(lt.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor<R>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(lt.shape(), R::one()));
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            self.backward_node(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        let params = self
            .nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| match n.op {
                Op::Param(p) => Some((p, i)),
                _ => None,
            })
            .collect();
        Ok(Gradients { grads, params })
    }

    fn backward_node(&self, idx: usize, g: &Tensor<R>, grads: &mut [Option<Tensor<R>>]) {
        let node = &self.nodes[idx];
        let gd = g.data();
        match &node.op {
            Op::Input | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
                let mut ga = vec![R::zero(); m * k];
                gemm_nt(gd, tb.data(), &mut ga, m, n, k);
                accumulate(grads, *a, ta.shape(), ga);
                let mut gb = vec![R::zero(); k * n];
                gemm_tn(ta.data(), gd, &mut gb, m, k, n);
                accumulate(grads, *b, tb.shape(), gb);
            }
            Op::Affine { x, w, b } => {
                let (tx, tw) = (self.value(*x), self.value(*w));
                let (m, k) = tx.matrix_dims();
                let n = tw.shape()[1];
                let mut gx = vec![R::zero(); m * k];
                gemm_nt(gd, tw.data(), &mut gx, m, n, k);
                accumulate(grads, *x, tx.shape(), gx);
                let mut gw = vec![R::zero(); k * n];
                gemm_tn(tx.data(), gd, &mut gw, m, k, n);
                accumulate(grads, *w, tw.shape(), gw);
                let mut gb = vec![R::zero(); n];
                for row in gd.chunks_exact(n) {
                    for (a, &v) in gb.iter_mut().zip(row) {
                        *a = *a + v;
                    }
                }
                accumulate(grads, *b, &[n], gb);
            }
            Op::Add(a, b) => {
                accumulate(grads, *a, g.shape(), gd.to_vec());
                accumulate(grads, *b, g.shape(), gd.to_vec());
            }
            Op::AddConst(a) | Op::Reshape(a) => {
                let shape = self.value(*a).shape();
                accumulate(grads, *a, shape, gd.to_vec());
            }
            Op::Scale(a, s) => {
                accumulate(grads, *a, g.shape(), gd.iter().map(|&v| v * *s).collect());
            }
            Op::Mul(a, c) => {
                let d = gd.iter().zip(c.data()).map(|(&v, &m)| v * m).collect();
                accumulate(grads, *a, g.shape(), d);
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            } => {
                let tg = self.value(*gamma);
                let (m, n) = self.value(*x).matrix_dims();
                let nf = R::of(n as f64);
                let mut gx = vec![R::zero(); m * n];
                let mut gg = vec![R::zero(); n];
                let mut gb = vec![R::zero(); n];
                let mut dxhat = vec![R::zero(); n];
                for i in 0..m {
                    let dy = &gd[i * n..(i + 1) * n];
                    let xh = &xhat[i * n..(i + 1) * n];
                    let mut mean_d = R::zero();
                    let mut mean_dx = R::zero();
                    for j in 0..n {
                        dxhat[j] = dy[j] * tg.data()[j];
                        gg[j] = gg[j] + dy[j] * xh[j];
                        gb[j] = gb[j] + dy[j];
                        mean_d = mean_d + dxhat[j];
                        mean_dx = mean_dx + dxhat[j] * xh[j];
                    }
                    mean_d = mean_d / nf;
                    mean_dx = mean_dx / nf;
                    for j in 0..n {
                        gx[i * n + j] = rstd[i] * (dxhat[j] - mean_d - xh[j] * mean_dx);
                    }
                }
                accumulate(grads, *x, g.shape(), gx);
                accumulate(grads, *gamma, &[n], gg);
                accumulate(grads, *beta, &[n], gb);
            }
            Op::Gelu(x) => {
                let tx = self.value(*x);
                let d = gd.iter().zip(tx.data()).map(|(&v, &xv)| v * gelu_grad(xv)).collect();
                accumulate(grads, *x, g.shape(), d);
            }
            Op::Attention {
                q,
                k,
                v,
                layout,
                probs,
            } => self.attention_backward(*q, *k, *v, layout, probs, gd, grads),
            Op::MeanPool { x, outer, len, inner } => {
                let (outer, len, inner) = (*outer, *len, *inner);
                let inv = R::one() / R::of(len as f64);
                let mut gx = vec![R::zero(); outer * len * inner];
                for o in 0..outer {
                    for l in 0..len {
                        for c in 0..inner {
                            gx[(o * len + l) * inner + c] = gd[o * inner + c] * inv;
                        }
                    }
                }
                accumulate(grads, *x, self.value(*x).shape(), gx);
            }
            Op::MaxPool {
                x,
                outer,
                len,
                inner,
                argmax,
            } => {
                let (outer, len, inner) = (*outer, *len, *inner);
                let mut gx = vec![R::zero(); outer * len * inner];
                for o in 0..outer {
                    for c in 0..inner {
                        let d = o * inner + c;
                        gx[(o * len + argmax[d] as usize) * inner + c] = gd[d];
                    }
                }
                accumulate(grads, *x, self.value(*x).shape(), gx);
            }
            Op::Concat { parts, outer, chunks } => {
                let total: usize = chunks.iter().sum();
                let mut start = 0;
                for (&p, &c) in parts.iter().zip(chunks) {
                    let mut gp = Vec::with_capacity(outer * c);
                    for o in 0..*outer {
                        gp.extend_from_slice(&gd[o * total + start..o * total + start + c]);
                    }
                    accumulate(grads, p, self.value(p).shape(), gp);
                    start += c;
                }
            }
            Op::Rows { x, start } => {
                let tx = self.value(*x);
                let n = tx.matrix_dims().1;
                let mut gx = vec![R::zero(); tx.len()];
                gx[start * n..start * n + gd.len()].copy_from_slice(gd);
                accumulate(grads, *x, tx.shape(), gx);
            }
            Op::Cols { x, start, width } => {
                let tx = self.value(*x);
                let (m, n) = tx.matrix_dims();
                let mut gx = vec![R::zero(); tx.len()];
                for i in 0..m {
                    gx[i * n + start..i * n + start + width].copy_from_slice(&gd[i * width..(i + 1) * width]);
                }
                accumulate(grads, *x, tx.shape(), gx);
            }
            Op::Sum(x) => {
                let tx = self.value(*x);
                accumulate(grads, *x, tx.shape(), vec![gd[0]; tx.len()]);
            }
            Op::WeightedSum(terms) => {
                for &(id, c) in terms {
                    accumulate(grads, id, self.value(id).shape(), vec![gd[0] * c]);
                }
            }
            Op::L1 { pred, target, weight } => {
                let tp = self.value(*pred);
                let d = tp
                    .data()
                    .iter()
                    .zip(target)
                    .zip(weight)
                    .map(|((&p, &t), &w)| gd[0] * w * sign(p - t))
                    .collect();
                accumulate(grads, *pred, tp.shape(), d);
            }
            Op::SoftmaxCe {
                logits,
                target,
                weight,
                probs,
            } => {
                let tl = self.value(*logits);
                let (m, c) = tl.matrix_dims();
                let mut d = vec![R::zero(); m * c];
                for i in 0..m {
                    if weight[i] == R::zero() {
                        continue;
                    }
                    let t = &target[i * c..(i + 1) * c];
                    let mass: R = t.iter().copied().sum();
                    for j in 0..c {
                        d[i * c + j] = gd[0] * weight[i] * (probs[i * c + j] * mass - t[j]);
                    }
                }
                accumulate(grads, *logits, tl.shape(), d);
            }
            Op::BceLogits { logits, target, weight } => {
                let tl = self.value(*logits);
                let d = tl
                    .data()
                    .iter()
                    .zip(target)
                    .zip(weight)
                    .map(|((&x, &y), &w)| gd[0] * w * (sigmoid(x) - y))
                    .collect();
                accumulate(grads, *logits, tl.shape(), d);
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn attention_backward(
        &self,
        q: NodeId,
        k: NodeId,
        v: NodeId,
        layout: &AttentionLayout,
        probs: &[R],
        gd: &[R],
        grads: &mut [Option<Tensor<R>>],
    ) {
        let (tq, tk, tv) = (self.value(q), self.value(k), self.value(v));
        let (_, width) = tq.matrix_dims();
        let h = layout.heads;
        let dh = width / h;
        let scale = R::one() / R::of(dh as f64).sqrt();
        let (lq, lk) = (layout.q_len, layout.k_len);
        let mut gq = vec![R::zero(); tq.len()];
        let mut gk = vec![R::zero(); tk.len()];
        let mut gv = vec![R::zero(); tv.len()];
        let mut dp = vec![R::zero(); lk];
        let (qd, kd, vd) = (tq.data(), tk.data(), tv.data());
        for g in 0..layout.groups {
            for head in 0..h {
                let off = head * dh;
                for i in 0..lq {
                    let qrow = layout.q_row(g, i);
                    let go = &gd[qrow * width + off..qrow * width + off + dh];
                    let base = ((g * h + head) * lq + i) * lk;
                    let p = &probs[base..base + lk];
                    let mut weighted = R::zero();
                    for j in 0..lk {
                        if p[j] == R::zero() {
                            dp[j] = R::zero();
                            continue;
                        }
                        let krow = layout.k_row(g, j);
                        let vs = &vd[krow * width + off..krow * width + off + dh];
                        dp[j] = dot(go, vs);
                        weighted = weighted + p[j] * dp[j];
                        let gvs = &mut gv[krow * width + off..krow * width + off + dh];
                        for (a, &b) in gvs.iter_mut().zip(go) {
                            *a = *a + p[j] * b;
                        }
                    }
                    let qs = &qd[qrow * width + off..qrow * width + off + dh];
                    for j in 0..lk {
                        if p[j] == R::zero() {
                            continue;
                        }
                        let ds = p[j] * (dp[j] - weighted) * scale;
                        let krow = layout.k_row(g, j);
                        let ks = &kd[krow * width + off..krow * width + off + dh];
                        let gqs = &mut gq[qrow * width + off..qrow * width + off + dh];
                        for (a, &b) in gqs.iter_mut().zip(ks) {
                            *a = *a + ds * b;
                        }
                        let gks = &mut gk[krow * width + off..krow * width + off + dh];
                        for (a, &b) in gks.iter_mut().zip(qs) {
                            *a = *a + ds * b;
                        }
                    }
                }
            }
        }
        accumulate(grads, q, tq.shape(), gq);
        accumulate(grads, k, tk.shape(), gk);
        accumulate(grads, v, tv.shape(), gv);
    }
}

fn sign<R: Real>(v: R) -> R {
    if v > R::zero() {
        R::one()
    } else if v < R::zero() {
        -R::one()
    } else {
        R::zero()
    }
}

fn accumulate<R: Real>(grads: &mut [Option<Tensor<R>>], id: NodeId, shape: &[usize], data: Vec<R>) {
    let t = Tensor::new(shape, data).expect("gradient shape matches value");
    match &mut grads[id.0] {
        Some(existing) => existing.add_assign(&t),
        slot => *slot = Some(t),
    }
}

/// Result of a backward sweep.
#[derive(Debug)]
pub struct Gradients<R: Real> {
    grads: Vec<Option<Tensor<R>>>,
    params: Vec<(usize, usize)>,
}

impl<R: Real> Gradients<R> {
    pub fn of(&self, id: NodeId) -> Option<&Tensor<R>> {
        self.grads[id.0].as_ref()
    }

    /// Gradients per parameter index, summed over every binding of the same
    /// parameter in the graph. Parameters not reached from the loss are `None`.
    pub fn for_params(&self, n_params: usize) -> Vec<Option<Tensor<R>>> {
        let mut out: Vec<Option<Tensor<R>>> = (0..n_params).map(|_| None).collect();
        for &(p, node) in &self.params {
            if let Some(g) = &self.grads[node] {
                match &mut out[p] {
                    Some(acc) => acc.add_assign(g),
                    slot => *slot = Some(g.clone()),
                }
            }
        }
        out
    }
}
