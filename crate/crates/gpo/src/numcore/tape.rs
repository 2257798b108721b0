//! Reverse-mode differentiation over an append-only operation tape.
//!
//! Nodes are appended in execution order, which is already a topological
//! order; backward walks them from the loss towards the leaves and adds
//! gradient contributions into each input, so fan-out accumulates.

use std::ops::Range;
use std::sync::Arc;

use super::kernels::{self, axis_split};
use super::{BoolMatrix, Scalar, Tensor};
use crate::error::{dim_err, validation_err, Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<S> {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, S),
    Gelu(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<S>,
        rstd: Vec<S>,
    },
    Softmax {
        x: Var,
        axis: usize,
    },
    SplitHeads {
        x: Var,
        heads: usize,
    },
    MergeHeads(Var),
    Attention {
        q: Var,
        k: Var,
        v: Var,
        mask: Arc<BoolMatrix>,
        probs: Vec<S>,
    },
    SelectRows {
        x: Var,
        rows: Vec<usize>,
    },
    Reshape(Var),
    Sum(Var),
    Mse {
        pred: Var,
        target: Vec<S>,
    },
    GroupedCe {
        scores: Var,
        blocks: Vec<Range<usize>>,
        targets: Vec<S>,
        probs: Vec<S>,
    },
}

struct Node<S> {
    value: Tensor<S>,
    op: Op<S>,
    needs_grad: bool,
}

/// Records operations for one forward pass.
pub struct Tape<S> {
    nodes: Vec<Node<S>>,
}

impl<S: Scalar> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<S>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Leaf whose gradient is reported by [`Tape::backward`].
    pub fn param(&mut self, value: Tensor<S>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn value(&self, v: Var) -> &Tensor<S> {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor<S>, op: Op<S>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn mat(&self, v: Var) -> Result<(usize, usize)> {
        self.value(v).dims2()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.mat(a)?;
        let (k2, n) = self.mat(b)?;
        if k != k2 {
            return dim_err(format!(
                "matmul inner dimensions differ: {:?} × {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            ));
        }
        let c = kernels::matmul(self.value(a).data(), self.value(b).data(), m, k, n);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(Tensor::new([m, n], c)?, Op::MatMul(a, b), ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return dim_err(format!("add shapes differ: {:?} vs {:?}", va.shape(), vb.shape()));
        }
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| x + y).collect();
        let t = Tensor::new(va.shape().to_vec(), data)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(t, Op::Add(a, b), ng))
    }

    /// `x[m×n] + bias[n]` broadcast over rows.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (m, n) = self.mat(x)?;
        if self.value(bias).shape() != [n] {
            return dim_err(format!(
                "row bias {:?} does not fit matrix {:?}",
                self.value(bias).shape(),
                self.value(x).shape()
            ));
        }
        let b = self.value(bias).data();
        let mut data = self.value(x).data().to_vec();
        for row in data.chunks_mut(n) {
            for (v, &bb) in row.iter_mut().zip(b) {
                *v = *v + bb;
            }
        }
        let ng = self.ng(x) || self.ng(bias);
        Ok(self.push(Tensor::new([m, n], data)?, Op::AddRow(x, bias), ng))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return dim_err(format!("mul shapes differ: {:?} vs {:?}", va.shape(), vb.shape()));
        }
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| x * y).collect();
        let t = Tensor::new(va.shape().to_vec(), data)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(t, Op::Mul(a, b), ng))
    }

    pub fn scale(&mut self, x: Var, c: S) -> Var {
        let v = self.value(x);
        let t = Tensor::new(v.shape().to_vec(), v.data().iter().map(|&a| a * c).collect())
            .expect("same shape");
        let ng = self.ng(x);
        self.push(t, Op::Scale(x, c), ng)
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let t = Tensor::new(v.shape().to_vec(), v.data().iter().map(|&a| kernels::gelu(a)).collect())
            .expect("same shape");
        let ng = self.ng(x);
        self.push(t, Op::Gelu(x), ng)
    }

    /// Layer norm over the last dimension.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: S) -> Result<Var> {
        let shape = self.value(x).shape().to_vec();
        let d = *shape
            .last()
            .ok_or_else(|| Error::Dimension("layer_norm of a rank-0 tensor".into()))?;
        if d == 0 {
            return dim_err("layer_norm needs a last dimension of at least 1");
        }
        if self.value(gamma).shape() != [d] || self.value(beta).shape() != [d] {
            return dim_err(format!(
                "layer_norm affine params {:?}/{:?} do not match width {d}",
                self.value(gamma).shape(),
                self.value(beta).shape()
            ));
        }
        let r = kernels::layer_norm(
            self.value(x).data(),
            d,
            self.value(gamma).data(),
            self.value(beta).data(),
            eps,
        );
        let ng = self.ng(x) || self.ng(gamma) || self.ng(beta);
        let op = Op::LayerNorm {
            x,
            gamma,
            beta,
            xhat: r.xhat,
            rstd: r.rstd,
        };
        Ok(self.push(Tensor::new(shape, r.out)?, op, ng))
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let v = self.value(x);
        let out = kernels::softmax_axis(v.data(), v.shape(), axis)?;
        let t = Tensor::new(v.shape().to_vec(), out)?;
        let ng = self.ng(x);
        Ok(self.push(t, Op::Softmax { x, axis }, ng))
    }

    /// `[n × heads·dh]` → `[heads × n × dh]`.
    pub fn split_heads(&mut self, x: Var, heads: usize) -> Result<Var> {
        let (n, d) = self.mat(x)?;
        if heads == 0 || d % heads != 0 {
            return dim_err(format!("width {d} does not split into {heads} heads"));
        }
        let dh = d / heads;
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(n * d);
        for h in 0..heads {
            for i in 0..n {
                out.extend_from_slice(&src[i * d + h * dh..i * d + (h + 1) * dh]);
            }
        }
        let ng = self.ng(x);
        Ok(self.push(Tensor::new([heads, n, dh], out)?, Op::SplitHeads { x, heads }, ng))
    }

    /// `[heads × n × dh]` → `[n × heads·dh]`.
    pub fn merge_heads(&mut self, x: Var) -> Result<Var> {
        let (heads, n, dh) = match self.value(x).shape()[..] {
            [h, n, dh] => (h, n, dh),
            _ => return dim_err(format!("merge_heads expects rank 3, got {:?}", self.value(x).shape())),
        };
        let out = merge(self.value(x).data(), heads, n, dh);
        let ng = self.ng(x);
        Ok(self.push(Tensor::new([n, heads * dh], out)?, Op::MergeHeads(x), ng))
    }

    /// Masked scaled dot-product attention over `[heads × n × dh]` inputs.
    pub fn masked_attention(&mut self, q: Var, k: Var, v: Var, mask: Arc<BoolMatrix>) -> Result<Var> {
        let shape = self.value(q).shape().to_vec();
        let (heads, n, dh) = match shape[..] {
            [h, n, dh] => (h, n, dh),
            _ => return dim_err(format!("attention expects [heads, n, dh], got {shape:?}")),
        };
        if self.value(k).shape() != &shape[..] || self.value(v).shape() != &shape[..] {
            return dim_err(format!(
                "attention q/k/v shapes differ: {:?}, {:?}, {:?}",
                shape,
                self.value(k).shape(),
                self.value(v).shape()
            ));
        }
        let r = kernels::masked_attention(
            self.value(q).data(),
            self.value(k).data(),
            self.value(v).data(),
            heads,
            n,
            dh,
            &mask,
        )?;
        let ng = self.ng(q) || self.ng(k) || self.ng(v);
        let op = Op::Attention {
            q,
            k,
            v,
            mask,
            probs: r.probs,
        };
        Ok(self.push(Tensor::new(shape, r.out)?, op, ng))
    }

    /// Gathers the listed rows of a matrix.
    pub fn select_rows(&mut self, x: Var, rows: Vec<usize>) -> Result<Var> {
        let (n, d) = self.mat(x)?;
        if let Some(&bad) = rows.iter().find(|&&r| r >= n) {
            return dim_err(format!("row {bad} out of range for {n} rows"));
        }
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(rows.len() * d);
        for &r in &rows {
            out.extend_from_slice(&src[r * d..(r + 1) * d]);
        }
        let t = Tensor::new([rows.len(), d], out)?;
        let ng = self.ng(x);
        Ok(self.push(t, Op::SelectRows { x, rows }, ng))
    }

    pub fn reshape(&mut self, x: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let t = self.value(x).reshape(shape)?;
        let ng = self.ng(x);
        Ok(self.push(t, Op::Reshape(x), ng))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().fold(S::zero(), |a, &b| a + b);
        let ng = self.ng(x);
        self.push(Tensor::scalar(s), Op::Sum(x), ng)
    }

    /// Mean squared error against a fixed target.
    pub fn mse(&mut self, pred: Var, target: &[S]) -> Result<Var> {
        let p = self.value(pred).data();
        if p.len() != target.len() || p.is_empty() {
            return dim_err(format!(
                "mse prediction has {} values, target {}",
                p.len(),
                target.len()
            ));
        }
        let s = p
            .iter()
            .zip(target)
            .fold(S::zero(), |a, (&x, &y)| a + (x - y) * (x - y));
        let loss = s / S::of(p.len() as f64);
        let ng = self.ng(pred);
        let op = Op::Mse {
            pred,
            target: target.to_vec(),
        };
        Ok(self.push(Tensor::scalar(loss), op, ng))
    }

    /// Mean over blocks of `−Σ yᵢ log softmax(scores[block])ᵢ`.
    ///
    /// `blocks` must partition the score indices and each target slice must
    /// be a distribution.
    pub fn grouped_cross_entropy(
        &mut self,
        scores: Var,
        blocks: &[Range<usize>],
        targets: &[S],
    ) -> Result<Var> {
        let s = self.value(scores);
        let n = s.len();
        if targets.len() != n {
            return dim_err(format!("{} scores but {} targets", n, targets.len()));
        }
        if blocks.is_empty() {
            return validation_err("grouped cross-entropy needs at least one block");
        }
        let mut next = 0;
        for b in blocks {
            if b.start != next || b.end <= b.start {
                return validation_err(format!("blocks do not partition 0..{n}: bad block {b:?}"));
            }
            next = b.end;
        }
        if next != n {
            return validation_err(format!("blocks cover 0..{next} but there are {n} scores"));
        }
        for b in blocks {
            let t = &targets[b.clone()];
            let total = t.iter().fold(0.0, |a, &y| a + y.f64());
            if t.iter().any(|y| y.f64() < 0.0) || (total - 1.0).abs() > 1e-6 {
                return validation_err(format!("target slice {b:?} sums to {total}, not 1"));
            }
        }
        let mut probs = s.data().to_vec();
        let mut total = S::zero();
        for b in blocks {
            let x = &s.data()[b.clone()];
            let mx = x.iter().fold(S::neg_infinity(), |m, &v| m.max(v));
            let lse = x.iter().fold(S::zero(), |a, &v| a + (v - mx).exp()).ln() + mx;
            let mut block_loss = S::zero();
            for i in b.clone() {
                let logp = s.data()[i] - lse;
                probs[i] = logp.exp();
                if targets[i] > S::zero() {
                    block_loss = block_loss - targets[i] * logp;
                }
            }
            total = total + block_loss;
        }
        let loss = total / S::of(blocks.len() as f64);
        let ng = self.ng(scores);
        let op = Op::GroupedCe {
            scores,
            blocks: blocks.to_vec(),
            targets: targets.to_vec(),
            probs,
        };
        Ok(self.push(Tensor::scalar(loss), op, ng))
    }

    /// Propagates d`loss`/d(node) back to every node that needs a gradient.
    pub fn backward(&self, loss: Var) -> Result<Gradients<S>> {
        let lv = self.value(loss);
        if !lv.is_scalar() {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<S>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![S::one()]);
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(node, &g, &mut grads)?;
            grads[idx] = Some(g);
        }
        let grads = grads
            .into_iter()
            .zip(&self.nodes)
            .map(|(g, n)| g.map(|d| Tensor::new(n.value.shape().to_vec(), d).expect("grad shape")))
            .collect();
        Ok(Gradients { grads })
    }

    fn acc(&self, grads: &mut [Option<Vec<S>>], v: Var, contrib: Vec<S>) {
        if !self.ng(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(g) => {
                for (a, b) in g.iter_mut().zip(contrib) {
                    *a = *a + b;
                }
            }
            slot @ None => *slot = Some(contrib),
        }
    }

    fn propagate(&self, node: &Node<S>, g: &[S], grads: &mut [Option<Vec<S>>]) -> Result<()> {
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.mat(*a)?;
                let (_, n) = self.mat(*b)?;
                if self.ng(*a) {
                    let da = kernels::matmul_bt(g, self.value(*b).data(), m, n, k);
                    self.acc(grads, *a, da);
                }
                if self.ng(*b) {
                    let db = kernels::matmul_at(self.value(*a).data(), g, m, k, n);
                    self.acc(grads, *b, db);
                }
            }
            Op::Add(a, b) => {
                self.acc(grads, *a, g.to_vec());
                self.acc(grads, *b, g.to_vec());
            }
            Op::AddRow(x, bias) => {
                self.acc(grads, *x, g.to_vec());
                if self.ng(*bias) {
                    let n = self.value(*bias).len();
                    let mut db = vec![S::zero(); n];
                    for row in g.chunks(n) {
                        for (d, &v) in db.iter_mut().zip(row) {
                            *d = *d + v;
                        }
                    }
                    self.acc(grads, *bias, db);
                }
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                if self.ng(*a) {
                    self.acc(grads, *a, g.iter().zip(vb).map(|(&d, &y)| d * y).collect());
                }
                if self.ng(*b) {
                    self.acc(grads, *b, g.iter().zip(va).map(|(&d, &x)| d * x).collect());
                }
            }
            Op::Scale(x, c) => {
                self.acc(grads, *x, g.iter().map(|&d| d * *c).collect());
            }
            Op::Gelu(x) => {
                let vx = self.value(*x).data();
                let dx = g
                    .iter()
                    .zip(vx)
                    .map(|(&d, &a)| d * kernels::gelu_grad(a))
                    .collect();
                self.acc(grads, *x, dx);
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            } => {
                let gm = self.value(*gamma).data();
                let d = gm.len();
                let dn = S::of(d as f64);
                if self.ng(*gamma) || self.ng(*beta) {
                    let mut dg = vec![S::zero(); d];
                    let mut db = vec![S::zero(); d];
                    for (grow, hrow) in g.chunks(d).zip(xhat.chunks(d)) {
                        for j in 0..d {
                            dg[j] = dg[j] + grow[j] * hrow[j];
                            db[j] = db[j] + grow[j];
                        }
                    }
                    self.acc(grads, *gamma, dg);
                    self.acc(grads, *beta, db);
                }
                if self.ng(*x) {
                    let mut dx = vec![S::zero(); g.len()];
                    for (r, (grow, hrow)) in g.chunks(d).zip(xhat.chunks(d)).enumerate() {
                        let mut s1 = S::zero();
                        let mut s2 = S::zero();
                        for j in 0..d {
                            let dh = grow[j] * gm[j];
                            s1 = s1 + dh;
                            s2 = s2 + dh * hrow[j];
                        }
                        let k = rstd[r] / dn;
                        for j in 0..d {
                            let dh = grow[j] * gm[j];
                            dx[r * d + j] = k * (dn * dh - s1 - hrow[j] * s2);
                        }
                    }
                    self.acc(grads, *x, dx);
                }
            }
            Op::Softmax { x, axis } => {
                let y = node.value.data();
                let (outer, len, inner) = axis_split(node.value.shape(), *axis)?;
                let mut dx = vec![S::zero(); y.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let base = o * len * inner + i;
                        let mut dotp = S::zero();
                        for j in 0..len {
                            let p = base + j * inner;
                            dotp = dotp + g[p] * y[p];
                        }
                        for j in 0..len {
                            let p = base + j * inner;
                            dx[p] = y[p] * (g[p] - dotp);
                        }
                    }
                }
                self.acc(grads, *x, dx);
            }
            Op::SplitHeads { x, heads } => {
                let (n, d) = self.mat(*x)?;
                self.acc(grads, *x, merge(g, *heads, n, d / heads));
            }
            Op::MergeHeads(x) => {
                let (heads, n, dh) = match self.value(*x).shape()[..] {
                    [h, n, dh] => (h, n, dh),
                    _ => unreachable!("checked at record time"),
                };
                let d = heads * dh;
                let mut dx = Vec::with_capacity(g.len());
                for h in 0..heads {
                    for i in 0..n {
                        dx.extend_from_slice(&g[i * d + h * dh..i * d + (h + 1) * dh]);
                    }
                }
                self.acc(grads, *x, dx);
            }
            Op::Attention {
                q,
                k,
                v,
                mask,
                probs,
            } => {
                let (heads, n, dh) = match node.value.shape()[..] {
                    [h, n, dh] => (h, n, dh),
                    _ => unreachable!("checked at record time"),
                };
                let (dq, dk, dv) = kernels::masked_attention_backward(
                    self.value(*q).data(),
                    self.value(*k).data(),
                    self.value(*v).data(),
                    probs,
                    g,
                    heads,
                    n,
                    dh,
                    mask,
                );
                self.acc(grads, *q, dq);
                self.acc(grads, *k, dk);
                self.acc(grads, *v, dv);
            }
            Op::SelectRows { x, rows } => {
                let (n, d) = self.mat(*x)?;
                let mut dx = vec![S::zero(); n * d];
                for (grow, &r) in g.chunks(d).zip(rows) {
                    for (a, &b) in dx[r * d..(r + 1) * d].iter_mut().zip(grow) {
                        *a = *a + b;
                    }
                }
                self.acc(grads, *x, dx);
            }
            Op::Reshape(x) => self.acc(grads, *x, g.to_vec()),
            Op::Sum(x) => {
                let n = self.value(*x).len();
                self.acc(grads, *x, vec![g[0]; n]);
            }
            Op::Mse { pred, target } => {
                let p = self.value(*pred).data();
                let k = S::of(2.0) * g[0] / S::of(p.len() as f64);
                let dx = p.iter().zip(target).map(|(&a, &b)| k * (a - b)).collect();
                self.acc(grads, *pred, dx);
            }
            Op::GroupedCe {
                scores,
                blocks,
                targets,
                probs,
            } => {
                let k = g[0] / S::of(blocks.len() as f64);
                let mut dx = vec![S::zero(); probs.len()];
                for b in blocks {
                    let mass = targets[b.clone()].iter().fold(S::zero(), |a, &y| a + y);
                    for i in b.clone() {
                        dx[i] = k * (mass * probs[i] - targets[i]);
                    }
                }
                self.acc(grads, *scores, dx);
            }
        }
        Ok(())
    }
}

fn merge<S: Scalar>(src: &[S], heads: usize, n: usize, dh: usize) -> Vec<S> {
    let d = heads * dh;
    let mut out = vec![S::zero(); n * d];
    for h in 0..heads {
        for i in 0..n {
            out[i * d + h * dh..i * d + (h + 1) * dh]
                .copy_from_slice(&src[(h * n + i) * dh..(h * n + i + 1) * dh]);
        }
    }
    out
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
pub struct Gradients<S> {
    grads: Vec<Option<Tensor<S>>>,
}

impl<S: Scalar> Gradients<S> {
    /// `None` when `v` does not influence the loss through differentiable ops.
    pub fn get(&self, v: Var) -> Option<&Tensor<S>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient of `v`, or zeros shaped like `like` when none flowed.
    pub fn get_or_zeros(&self, v: Var, like: &Tensor<S>) -> Tensor<S> {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(like.shape().to_vec()))
    }
}
