//! Tape of primitive operations with reverse accumulation.
//!
//! Nodes are appended in evaluation order, so the tape is its own
//! topological order and the backward sweep walks it in reverse. Leaves
//! borrowed from a [`Parameter`] carry its name; only trainable leaves
//! require gradients, and nothing flows into subgraphs that depend solely
//! on frozen values.

use std::borrow::Cow;
use std::collections::BTreeMap;

use super::kernels::{self, dot, gelu, gelu_grad, matmul, matmul_at, matmul_bt};
use super::{Parameter, Real, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<F> {
    Leaf,
    Add(NodeId, NodeId),
    AddRow(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, F),
    Sum(NodeId),
    MatMul(NodeId, NodeId),
    MatMulT(NodeId, NodeId),
    Gelu(NodeId),
    Softmax(NodeId),
    LayerNorm {
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        xhat: Vec<F>,
        rstd: Vec<F>,
    },
    Attention {
        q: NodeId,
        k: NodeId,
        v: NodeId,
        heads: usize,
        /// `heads x S x S` row-stochastic weights.
        probs: Vec<F>,
    },
    Gather {
        table: NodeId,
        ids: Vec<usize>,
    },
    ConcatRows(Vec<NodeId>),
    Row(NodeId, usize),
    CrossEntropy {
        logits: NodeId,
        label: usize,
        probs: Vec<F>,
    },
}

struct Node<'a, F: Real> {
    value: Cow<'a, Tensor<F>>,
    op: Op<F>,
    requires_grad: bool,
}

/// A single forward pass recorded for differentiation.
pub struct Graph<'a, F: Real> {
    nodes: Vec<Node<'a, F>>,
    bindings: Vec<(String, NodeId)>,
}

impl<'a, F: Real> Default for Graph<'a, F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'a, F: Real> Graph<'a, F> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            bindings: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor<F> {
        &self.nodes[id.0].value
    }

    pub fn requires_grad(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    /// Row-stochastic attention weights (`heads x S x S`) of an attention node.
    pub fn attention_probs(&self, id: NodeId) -> Option<(&[F], usize)> {
        match &self.nodes[id.0].op {
            Op::Attention { probs, heads, .. } => Some((probs, *heads)),
            _ => None,
        }
    }

    fn push(&mut self, value: Tensor<F>, op: Op<F>, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value: Cow::Owned(value),
            op,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn rg(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|id| self.nodes[id.0].requires_grad)
    }

    pub fn constant(&mut self, t: Tensor<F>) -> NodeId {
        self.push(t, Op::Leaf, false)
    }

    pub fn constant_ref(&mut self, t: &'a Tensor<F>) -> NodeId {
        self.nodes.push(Node {
            value: Cow::Borrowed(t),
            op: Op::Leaf,
            requires_grad: false,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// Owned leaf that receives a gradient reported under `name`.
    pub fn variable(&mut self, name: &str, t: Tensor<F>) -> NodeId {
        let id = self.push(t, Op::Leaf, true);
        self.bindings.push((name.to_string(), id));
        id
    }

    /// Borrowed leaf for a parameter. Frozen parameters become constants.
    pub fn param(&mut self, p: &'a Parameter<F>) -> NodeId {
        self.nodes.push(Node {
            value: Cow::Borrowed(&p.data),
            op: Op::Leaf,
            requires_grad: p.trainable,
        });
        let id = NodeId(self.nodes.len() - 1);
        if p.trainable {
            self.bindings.push((p.name.clone(), id));
        }
        id
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.len() != vb.len() {
            return Err(Error::shape(
                "add",
                format!("{:?} vs {:?}", va.shape(), vb.shape()),
            ));
        }
        let mut out = va.clone();
        out.add_assign(vb);
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    /// Adds a length-`c` vector to every row of an `r x c` matrix.
    pub fn add_row(&mut self, x: NodeId, bias: NodeId) -> Result<NodeId> {
        let (vx, vb) = (self.value(x), self.value(bias));
        let (r, c) = vx.dims2();
        if vb.len() != c {
            return Err(Error::shape(
                "add_row",
                format!("{:?} + bias {:?}", vx.shape(), vb.shape()),
            ));
        }
        let mut out = vx.clone();
        for i in 0..r {
            for (o, &b) in out.row_mut(i).iter_mut().zip(vb.data()) {
                *o += b;
            }
        }
        let rg = self.rg(&[x, bias]);
        Ok(self.push(out, Op::AddRow(x, bias), rg))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.len() != vb.len() {
            return Err(Error::shape(
                "mul",
                format!("{:?} vs {:?}", va.shape(), vb.shape()),
            ));
        }
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| x * y).collect();
        let out = Tensor::new(va.shape().to_vec(), data)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: NodeId, s: F) -> NodeId {
        let mut out = self.value(a).clone();
        out.scale(s);
        let rg = self.rg(&[a]);
        self.push(out, Op::Scale(a, s), rg)
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let s: F = self.value(a).data().iter().copied().sum();
        let rg = self.rg(&[a]);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    /// `a (n x k) * b (k x m)`.
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        let (n, k) = va.dims2();
        let (k2, m) = vb.dims2();
        if k != k2 {
            return Err(Error::shape(
                "matmul",
                format!("{:?} x {:?}", va.shape(), vb.shape()),
            ));
        }
        let out = Tensor::new(vec![n, m], matmul(va.data(), vb.data(), n, k, m))?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::MatMul(a, b), rg))
    }

    /// `a (n x k) * b^T` with `b` stored `m x k` (the layout of a
    /// `out x in` weight matrix).
    pub fn matmul_t(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        let (n, k) = va.dims2();
        let (m, k2) = vb.dims2();
        if k != k2 {
            return Err(Error::shape(
                "matmul_t",
                format!("{:?} x {:?}^T", va.shape(), vb.shape()),
            ));
        }
        let out = Tensor::new(vec![n, m], matmul_bt(va.data(), vb.data(), n, k, m))?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::MatMulT(a, b), rg))
    }

    pub fn gelu(&mut self, a: NodeId) -> NodeId {
        let va = self.value(a);
        let data = va.data().iter().map(|&x| gelu(x)).collect();
        let out = Tensor::new(va.shape().to_vec(), data).expect("same shape");
        let rg = self.rg(&[a]);
        self.push(out, Op::Gelu(a), rg)
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, a: NodeId) -> Result<NodeId> {
        let out = kernels::softmax_rows(self.value(a))?;
        let rg = self.rg(&[a]);
        Ok(self.push(out, Op::Softmax(a), rg))
    }

    /// Row-wise layer normalization of an `r x c` matrix.
    pub fn layer_norm(&mut self, x: NodeId, gamma: NodeId, beta: NodeId, eps: F) -> Result<NodeId> {
        let (vx, vg, vb) = (self.value(x), self.value(gamma), self.value(beta));
        let (r, c) = vx.dims2();
        if vg.len() != c || vb.len() != c {
            return Err(Error::shape(
                "layer_norm",
                format!(
                    "x {:?}, gamma {:?}, beta {:?}",
                    vx.shape(),
                    vg.shape(),
                    vb.shape()
                ),
            ));
        }
        if !vx.all_finite() {
            return Err(Error::NonFinite("layer_norm"));
        }
        let mut out = Tensor::zeros(vx.shape());
        let mut xhat = vec![F::zero(); r * c];
        let mut rstd = vec![F::zero(); r];
        for i in 0..r {
            let row = vx.row(i);
            let (mean, rs) = kernels::layer_norm_row(row, vg.data(), vb.data(), eps, out.row_mut(i));
            rstd[i] = rs;
            for j in 0..c {
                xhat[i * c + j] = (row[j] - mean) * rs;
            }
        }
        let rg = self.rg(&[x, gamma, beta]);
        Ok(self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            },
            rg,
        ))
    }

    /// Scaled dot-product self-attention split into `heads` column groups.
    /// `q`, `k`, `v` are all `S x e`; the output is `S x e`.
    pub fn attention(&mut self, q: NodeId, k: NodeId, v: NodeId, heads: usize) -> Result<NodeId> {
        let (vq, vk, vv) = (self.value(q), self.value(k), self.value(v));
        let (s, e) = vq.dims2();
        if vk.dims2() != (s, e) || vv.dims2() != (s, e) {
            return Err(Error::shape(
                "attention",
                format!("q {:?}, k {:?}, v {:?}", vq.shape(), vk.shape(), vv.shape()),
            ));
        }
        if heads == 0 || e % heads != 0 {
            return Err(Error::shape(
                "attention",
                format!("{heads} heads do not divide width {e}"),
            ));
        }
        let d = e / heads;
        let scale = F::one() / F::from_usize(d).unwrap().sqrt();
        let mut probs = vec![F::zero(); heads * s * s];
        let mut out = Tensor::zeros(&[s, e]);
        let (qd, kd, vd) = (vq.data(), vk.data(), vv.data());
        for h in 0..heads {
            let off = h * d;
            for i in 0..s {
                let qi = &qd[i * e + off..i * e + off + d];
                let prow = &mut probs[(h * s + i) * s..(h * s + i + 1) * s];
                for j in 0..s {
                    prow[j] = dot(qi, &kd[j * e + off..j * e + off + d]) * scale;
                }
                if !prow.iter().all(|x| x.is_finite()) {
                    return Err(Error::NonFinite("attention"));
                }
                kernels::softmax_in_place(prow);
                let orow = &mut out.data_mut()[i * e + off..i * e + off + d];
                for j in 0..s {
                    let p = prow[j];
                    for (o, &x) in orow.iter_mut().zip(&vd[j * e + off..j * e + off + d]) {
                        *o += p * x;
                    }
                }
            }
        }
        let rg = self.rg(&[q, k, v]);
        Ok(self.push(
            out,
            Op::Attention {
                q,
                k,
                v,
                heads,
                probs,
            },
            rg,
        ))
    }

    /// Rows `ids` of a `V x c` table, as an `ids.len() x c` matrix.
    pub fn gather(&mut self, table: NodeId, ids: &[usize]) -> Result<NodeId> {
        let vt = self.value(table);
        let (v, c) = vt.dims2();
        let mut data = Vec::with_capacity(ids.len() * c);
        for &id in ids {
            if id >= v {
                return Err(Error::TokenOutOfRange { id, vocab: v });
            }
            data.extend_from_slice(vt.row(id));
        }
        let out = Tensor::new(vec![ids.len(), c], data)?;
        let rg = self.rg(&[table]);
        Ok(self.push(
            out,
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
            rg,
        ))
    }

    pub fn concat_rows(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let Some(&first) = parts.first() else {
            return Err(Error::shape("concat_rows", "no inputs"));
        };
        let c = self.value(first).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let v = self.value(p);
            if v.cols() != c {
                return Err(Error::shape(
                    "concat_rows",
                    format!("width {} vs {}", v.cols(), c),
                ));
            }
            rows += v.rows();
            data.extend_from_slice(v.data());
        }
        let out = Tensor::new(vec![rows, c], data)?;
        let rg = self.rg(parts);
        Ok(self.push(out, Op::ConcatRows(parts.to_vec()), rg))
    }

    /// Row `i` as a `1 x c` matrix.
    pub fn row(&mut self, a: NodeId, i: usize) -> Result<NodeId> {
        let va = self.value(a);
        if i >= va.rows() {
            return Err(Error::shape(
                "row",
                format!("row {i} of {:?}", va.shape()),
            ));
        }
        let out = Tensor::new(vec![1, va.cols()], va.row(i).to_vec())?;
        let rg = self.rg(&[a]);
        Ok(self.push(out, Op::Row(a, i), rg))
    }

    /// Softmax cross-entropy of a flat logit vector against `label`.
    pub fn cross_entropy(&mut self, logits: NodeId, label: usize) -> Result<NodeId> {
        let vl = self.value(logits);
        let loss = kernels::cross_entropy(vl.data(), label)?;
        let probs = kernels::softmax(vl.data())?;
        let rg = self.rg(&[logits]);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                label,
                probs,
            },
            rg,
        ))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients<F>> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::NonScalarLoss(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor<F>>> = (0..self.nodes.len()).map(|_| None).collect();
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(Tensor::full(lv.shape(), F::one()));
        }
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if self.nodes[i].requires_grad {
                self.propagate(i, &g, &mut grads);
            }
            grads[i] = Some(g);
        }
        let mut params: BTreeMap<String, Tensor<F>> = BTreeMap::new();
        for (name, id) in &self.bindings {
            let g = grads[id.0]
                .clone()
                .unwrap_or_else(|| Tensor::zeros(self.value(*id).shape()));
            match params.get_mut(name) {
                Some(acc) => acc.add_assign(&g),
                None => {
                    params.insert(name.clone(), g);
                }
            }
        }
        Ok(Gradients {
            nodes: grads,
            params,
        })
    }

    fn send(&self, grads: &mut [Option<Tensor<F>>], to: NodeId, g: Tensor<F>) {
        if !self.nodes[to.0].requires_grad {
            return;
        }
        match &mut grads[to.0] {
            Some(acc) => acc.add_assign(&g),
            slot => *slot = Some(g),
        }
    }

    fn wants(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    fn propagate(&self, i: usize, g: &Tensor<F>, grads: &mut [Option<Tensor<F>>]) {
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                let ga = Tensor::new(self.value(*a).shape().to_vec(), g.data().to_vec()).unwrap();
                let gb = Tensor::new(self.value(*b).shape().to_vec(), g.data().to_vec()).unwrap();
                self.send(grads, *a, ga);
                self.send(grads, *b, gb);
            }
            Op::AddRow(x, bias) => {
                if self.wants(*x) {
                    self.send(grads, *x, g.clone());
                }
                if self.wants(*bias) {
                    let (r, c) = g.dims2();
                    let mut gb = vec![F::zero(); c];
                    for row in 0..r {
                        for (acc, &v) in gb.iter_mut().zip(g.row(row)) {
                            *acc += v;
                        }
                    }
                    let shape = self.value(*bias).shape().to_vec();
                    self.send(grads, *bias, Tensor::new(shape, gb).unwrap());
                }
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                if self.wants(*a) {
                    let d = g.data().iter().zip(vb.data()).map(|(&x, &y)| x * y).collect();
                    self.send(grads, *a, Tensor::new(va.shape().to_vec(), d).unwrap());
                }
                if self.wants(*b) {
                    let d = g.data().iter().zip(va.data()).map(|(&x, &y)| x * y).collect();
                    self.send(grads, *b, Tensor::new(vb.shape().to_vec(), d).unwrap());
                }
            }
            Op::Scale(a, s) => {
                let mut ga = Tensor::new(self.value(*a).shape().to_vec(), g.data().to_vec()).unwrap();
                ga.scale(*s);
                self.send(grads, *a, ga);
            }
            Op::Sum(a) => {
                let ga = Tensor::full(self.value(*a).shape(), g.data()[0]);
                self.send(grads, *a, ga);
            }
            Op::MatMul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let (n, k) = va.dims2();
                let (_, m) = vb.dims2();
                if self.wants(*a) {
                    let d = matmul_bt(g.data(), vb.data(), n, m, k);
                    self.send(grads, *a, Tensor::new(va.shape().to_vec(), d).unwrap());
                }
                if self.wants(*b) {
                    let d = matmul_at(va.data(), g.data(), n, k, m);
                    self.send(grads, *b, Tensor::new(vb.shape().to_vec(), d).unwrap());
                }
            }
            Op::MatMulT(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let (n, k) = va.dims2();
                let (m, _) = vb.dims2();
                if self.wants(*a) {
                    let d = matmul(g.data(), vb.data(), n, m, k);
                    self.send(grads, *a, Tensor::new(va.shape().to_vec(), d).unwrap());
                }
                if self.wants(*b) {
                    let d = matmul_at(g.data(), va.data(), n, m, k);
                    self.send(grads, *b, Tensor::new(vb.shape().to_vec(), d).unwrap());
                }
            }
            Op::Gelu(a) => {
                let va = self.value(*a);
                let d = g
                    .data()
                    .iter()
                    .zip(va.data())
                    .map(|(&dy, &x)| dy * gelu_grad(x))
                    .collect();
                self.send(grads, *a, Tensor::new(va.shape().to_vec(), d).unwrap());
            }
            Op::Softmax(a) => {
                let p = &self.nodes[i].value;
                let (r, _) = p.dims2();
                let mut ga = Tensor::zeros(p.shape());
                for row in 0..r {
                    let (pr, gr) = (p.row(row), g.row(row));
                    let inner = dot(pr, gr);
                    for ((o, &pv), &gv) in ga.row_mut(row).iter_mut().zip(pr).zip(gr) {
                        *o = pv * (gv - inner);
                    }
                }
                self.send(grads, *a, ga);
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            } => {
                let vg = self.value(*gamma);
                let (r, c) = g.dims2();
                if self.wants(*gamma) || self.wants(*beta) {
                    let mut gg = vec![F::zero(); c];
                    let mut gb = vec![F::zero(); c];
                    for row in 0..r {
                        for j in 0..c {
                            let dy = g.data()[row * c + j];
                            gg[j] += dy * xhat[row * c + j];
                            gb[j] += dy;
                        }
                    }
                    let gs = self.value(*gamma).shape().to_vec();
                    let bs = self.value(*beta).shape().to_vec();
                    self.send(grads, *gamma, Tensor::new(gs, gg).unwrap());
                    self.send(grads, *beta, Tensor::new(bs, gb).unwrap());
                }
                if self.wants(*x) {
                    let cf = F::from_usize(c).unwrap();
                    let mut gx = Tensor::zeros(self.value(*x).shape());
                    for row in 0..r {
                        let xh = &xhat[row * c..(row + 1) * c];
                        let dy = g.row(row);
                        let mut mean_d = F::zero();
                        let mut mean_dx = F::zero();
                        for j in 0..c {
                            let d = dy[j] * vg.data()[j];
                            mean_d += d;
                            mean_dx += d * xh[j];
                        }
                        mean_d /= cf;
                        mean_dx /= cf;
                        let out = gx.row_mut(row);
                        for j in 0..c {
                            let d = dy[j] * vg.data()[j];
                            out[j] = rstd[row] * (d - mean_d - xh[j] * mean_dx);
                        }
                    }
                    self.send(grads, *x, gx);
                }
            }
            Op::Attention {
                q,
                k,
                v,
                heads,
                probs,
            } => {
                let (vq, vk, vv) = (self.value(*q), self.value(*k), self.value(*v));
                let (s, e) = vq.dims2();
                let d = e / heads;
                let scale = F::one() / F::from_usize(d).unwrap().sqrt();
                let mut gq = vec![F::zero(); s * e];
                let mut gk = vec![F::zero(); s * e];
                let mut gv = vec![F::zero(); s * e];
                let (qd, kd, vd, gd) = (vq.data(), vk.data(), vv.data(), g.data());
                let mut dp = vec![F::zero(); s];
                for h in 0..*heads {
                    let off = h * d;
                    for i in 0..s {
                        let prow = &probs[(h * s + i) * s..(h * s + i + 1) * s];
                        let go = &gd[i * e + off..i * e + off + d];
                        for j in 0..s {
                            dp[j] = dot(go, &vd[j * e + off..j * e + off + d]);
                            let p = prow[j];
                            for (acc, &x) in gv[j * e + off..j * e + off + d].iter_mut().zip(go) {
                                *acc += p * x;
                            }
                        }
                        let inner = dot(prow, &dp);
                        for j in 0..s {
                            let ds = prow[j] * (dp[j] - inner) * scale;
                            if ds == F::zero() {
                                continue;
                            }
                            for t in 0..d {
                                gq[i * e + off + t] += ds * kd[j * e + off + t];
                                gk[j * e + off + t] += ds * qd[i * e + off + t];
                            }
                        }
                    }
                }
                let shape = vq.shape().to_vec();
                self.send(grads, *q, Tensor::new(shape.clone(), gq).unwrap());
                self.send(grads, *k, Tensor::new(shape.clone(), gk).unwrap());
                self.send(grads, *v, Tensor::new(shape, gv).unwrap());
            }
            Op::Gather { table, ids } => {
                let vt = self.value(*table);
                let mut gt = Tensor::zeros(vt.shape());
                for (r, &id) in ids.iter().enumerate() {
                    for (acc, &x) in gt.row_mut(id).iter_mut().zip(g.row(r)) {
                        *acc += x;
                    }
                }
                self.send(grads, *table, gt);
            }
            Op::ConcatRows(parts) => {
                let c = g.cols();
                let mut start = 0;
                for &p in parts {
                    let vp = self.value(p);
                    let n = vp.rows() * c;
                    if self.wants(p) {
                        let d = g.data()[start..start + n].to_vec();
                        self.send(grads, p, Tensor::new(vp.shape().to_vec(), d).unwrap());
                    }
                    start += n;
                }
            }
            Op::Row(a, r) => {
                let mut ga = Tensor::zeros(self.value(*a).shape());
                ga.row_mut(*r).copy_from_slice(g.data());
                self.send(grads, *a, ga);
            }
            Op::CrossEntropy {
                logits,
                label,
                probs,
            } => {
                let scale = g.data()[0];
                let mut d: Vec<F> = probs.iter().map(|&p| p * scale).collect();
                d[*label] -= scale;
                let shape = self.value(*logits).shape().to_vec();
                self.send(grads, *logits, Tensor::new(shape, d).unwrap());
            }
        }
    }
}

/// Result of a backward sweep: per-node gradients plus the gradients of
/// every trainable parameter leaf, keyed by parameter name.
#[derive(Clone, Debug)]
pub struct Gradients<F> {
    nodes: Vec<Option<Tensor<F>>>,
    params: BTreeMap<String, Tensor<F>>,
}

impl<F: Real> Default for Gradients<F> {
    fn default() -> Self {
        Self {
            nodes: Vec::new(),
            params: BTreeMap::new(),
        }
    }
}

impl<F: Real> Gradients<F> {
    /// Gradient with respect to an arbitrary node, if any flowed into it.
    pub fn wrt(&self, id: NodeId) -> Option<&Tensor<F>> {
        self.nodes.get(id.0).and_then(|g| g.as_ref())
    }

    pub fn param(&self, name: &str) -> Option<&Tensor<F>> {
        self.params.get(name)
    }

    pub fn params(&self) -> &BTreeMap<String, Tensor<F>> {
        &self.params
    }

    /// Drops per-node storage, keeping only parameter gradients.
    pub fn into_param_grads(self) -> Self {
        Self {
            nodes: Vec::new(),
            params: self.params,
        }
    }

    /// Adds another set of parameter gradients into this one.
    pub fn merge(&mut self, other: &Gradients<F>) {
        for (name, g) in &other.params {
            match self.params.get_mut(name) {
                Some(acc) => acc.add_assign(g),
                None => {
                    self.params.insert(name.clone(), g.clone());
                }
            }
        }
    }

    pub fn scale(&mut self, s: F) {
        for g in self.params.values_mut() {
            g.scale(s);
        }
    }
}
