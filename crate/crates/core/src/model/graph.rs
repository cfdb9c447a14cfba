//! A small eager tape for reverse-mode differentiation over row-major matrices.
//!
//! Every op computes its value when it is recorded; [`Graph::backward`] walks
//! the tape in reverse and returns gradients for the parameter tensors the
//! graph borrowed. Nodes that do not reach the root receive no gradient, so
//! gradient-free side computations (roll-in) may share a graph.

use rand::Rng;

use super::tensor::{dot, matmul, matmul_a_bt, matmul_at_b, softmax_in_place, Scalar, Tensor};

pub type NodeId = usize;

const LN_EPS: f64 = 1e-5;

enum Op<T> {
    Input,
    Param(usize),
    MatMul(NodeId, NodeId),
    MatMulBt(NodeId, NodeId),
    AddBias(NodeId, NodeId),
    Add(NodeId, NodeId),
    Gather(NodeId, Vec<usize>),
    PairRows(NodeId),
    LayerNorm {
        x: NodeId,
        gain: NodeId,
        bias: NodeId,
        xhat: Vec<T>,
        rstd: Vec<T>,
    },
    Gelu(NodeId),
    Dropout(NodeId, Vec<T>),
    Attention {
        q: NodeId,
        k: NodeId,
        v: NodeId,
        heads: usize,
        probs: Vec<T>,
    },
    CrossEntropy {
        logits: NodeId,
        targets: Vec<usize>,
        smoothing: T,
        probs: Vec<T>,
    },
    Scale(NodeId, T),
    Sum(Vec<NodeId>),
}

struct Node<T> {
    op: Op<T>,
    value: Option<Tensor<T>>,
}

pub struct Graph<'p, T: Scalar> {
    params: &'p [Tensor<T>],
    param_nodes: Vec<Option<NodeId>>,
    nodes: Vec<Node<T>>,
}

impl<'p, T: Scalar> Graph<'p, T> {
    pub fn new(params: &'p [Tensor<T>]) -> Self {
        Graph {
            params,
            param_nodes: vec![None; params.len()],
            nodes: Vec::new(),
        }
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        match &self.nodes[id].op {
            Op::Param(i) => &self.params[*i],
            _ => self.nodes[id].value.as_ref().expect("non-param nodes carry a value"),
        }
    }

    pub fn scalar(&self, id: NodeId) -> T {
        self.value(id).data[0]
    }

    fn push(&mut self, op: Op<T>, value: Tensor<T>) -> NodeId {
        self.nodes.push(Node { op, value: Some(value) });
        self.nodes.len() - 1
    }

    pub fn input(&mut self, value: Tensor<T>) -> NodeId {
        self.push(Op::Input, value)
    }

    pub fn param(&mut self, index: usize) -> NodeId {
        if let Some(id) = self.param_nodes[index] {
            return id;
        }
        self.nodes.push(Node {
            op: Op::Param(index),
            value: None,
        });
        let id = self.nodes.len() - 1;
        self.param_nodes[index] = Some(id);
        id
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = matmul(self.value(a), self.value(b));
        self.push(Op::MatMul(a, b), v)
    }

    /// `a · bᵀ`
    pub fn matmul_bt(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = matmul_a_bt(self.value(a), self.value(b));
        self.push(Op::MatMulBt(a, b), v)
    }

    pub fn add_bias(&mut self, x: NodeId, bias: NodeId) -> NodeId {
        let mut v = self.value(x).clone();
        let b = self.value(bias);
        assert_eq!(b.len(), v.cols, "bias width mismatch");
        for r in 0..v.rows {
            for (o, &bb) in v.row_mut(r).iter_mut().zip(&b.data) {
                *o += bb;
            }
        }
        self.push(Op::AddBias(x, bias), v)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let mut v = self.value(a).clone();
        v.add_assign(self.value(b));
        self.push(Op::Add(a, b), v)
    }

    pub fn gather(&mut self, src: NodeId, rows: Vec<usize>) -> NodeId {
        let s = self.value(src);
        let mut v = Tensor::zeros(rows.len(), s.cols);
        for (r, &i) in rows.iter().enumerate() {
            v.row_mut(r).copy_from_slice(s.row(i));
        }
        self.push(Op::Gather(src, rows), v)
    }

    /// Row i of the output is `[x_i ; x_{i+1}]`.
    pub fn pair_rows(&mut self, x: NodeId) -> NodeId {
        let s = self.value(x);
        let n = s.rows.saturating_sub(1);
        let d = s.cols;
        let mut v = Tensor::zeros(n, 2 * d);
        for i in 0..n {
            let row = v.row_mut(i);
            row[..d].copy_from_slice(s.row(i));
            row[d..].copy_from_slice(s.row(i + 1));
        }
        self.push(Op::PairRows(x), v)
    }

    pub fn layer_norm(&mut self, x: NodeId, gain: NodeId, bias: NodeId) -> NodeId {
        let xv = self.value(x);
        let (rows, d) = xv.shape();
        let g = &self.value(gain).data;
        let b = &self.value(bias).data;
        let mut out = Tensor::zeros(rows, d);
        let mut xhat = vec![T::zero(); rows * d];
        let mut rstd = vec![T::zero(); rows];
        let dn = T::of(d as f64);
        for r in 0..rows {
            let row = xv.row(r);
            let mean = row.iter().copied().sum::<T>() / dn;
            let var = row.iter().map(|&x| (x - mean) * (x - mean)).sum::<T>() / dn;
            let rs = T::one() / (var + T::of(LN_EPS)).sqrt();
            rstd[r] = rs;
            for c in 0..d {
                let h = (row[c] - mean) * rs;
                xhat[r * d + c] = h;
                out.data[r * d + c] = h * g[c] + b[c];
            }
        }
        self.push(
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            },
            out,
        )
    }

    pub fn gelu(&mut self, x: NodeId) -> NodeId {
        let mut v = self.value(x).clone();
        for e in v.data.iter_mut() {
            *e = gelu(*e);
        }
        self.push(Op::Gelu(x), v)
    }

    /// Inverted dropout; identity when `p == 0`.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: NodeId, p: f64, rng: &mut R) -> NodeId {
        if p <= 0.0 {
            return x;
        }
        let keep = T::of(1.0 / (1.0 - p));
        let mask: Vec<T> = (0..self.value(x).len())
            .map(|_| if rng.gen::<f64>() < p { T::zero() } else { keep })
            .collect();
        let mut v = self.value(x).clone();
        for (e, &m) in v.data.iter_mut().zip(&mask) {
            *e = *e * m;
        }
        self.push(Op::Dropout(x, mask), v)
    }

    /// Unmasked multi-head scaled dot-product attention over projected
    /// queries `q (n×d)`, keys `k (m×d)` and values `v (m×d)`.
    pub fn attention(&mut self, q: NodeId, k: NodeId, v: NodeId, heads: usize) -> NodeId {
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let (n, d) = qv.shape();
        let m = kv.rows;
        let dh = d / heads;
        let scale = T::of(1.0 / (dh as f64).sqrt());
        let mut probs = vec![T::zero(); heads * n * m];
        let mut out = Tensor::zeros(n, d);
        for h in 0..heads {
            let cols = h * dh..(h + 1) * dh;
            for i in 0..n {
                let p = &mut probs[(h * n + i) * m..(h * n + i + 1) * m];
                let qi = &qv.row(i)[cols.clone()];
                for (j, pj) in p.iter_mut().enumerate() {
                    *pj = dot(qi, &kv.row(j)[cols.clone()]) * scale;
                }
                softmax_in_place(p);
                let orow = &mut out.data[i * d + h * dh..i * d + (h + 1) * dh];
                for (j, &pj) in p.iter().enumerate() {
                    for (o, &x) in orow.iter_mut().zip(&vv.row(j)[cols.clone()]) {
                        *o += pj * x;
                    }
                }
            }
        }
        self.push(Op::Attention { q, k, v, heads, probs }, out)
    }

    /// Summed cross-entropy of `targets` under row-wise softmax of `logits`,
    /// with optional uniform label smoothing. Returns a 1×1 node.
    pub fn cross_entropy(&mut self, logits: NodeId, targets: Vec<usize>, smoothing: f64) -> NodeId {
        let lv = self.value(logits);
        assert_eq!(lv.rows, targets.len(), "one target per logit row");
        let classes = lv.cols;
        let eps = T::of(smoothing);
        let mut probs = lv.data.clone();
        let mut total = T::zero();
        for (r, &t) in targets.iter().enumerate() {
            let row = &mut probs[r * classes..(r + 1) * classes];
            let logit_row = lv.row(r);
            let max = logit_row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = logit_row.iter().map(|&x| (x - max).exp()).sum::<T>().ln() + max;
            total += (T::one() - eps) * (lse - logit_row[t]);
            if smoothing > 0.0 {
                let mean_nll = logit_row.iter().map(|&x| lse - x).sum::<T>() / T::of(classes as f64);
                total += eps * mean_nll;
            }
            softmax_in_place(row);
        }
        self.push(
            Op::CrossEntropy {
                logits,
                targets,
                smoothing: eps,
                probs,
            },
            Tensor::from_vec(1, 1, vec![total]),
        )
    }

    pub fn scale(&mut self, x: NodeId, factor: T) -> NodeId {
        let mut v = self.value(x).clone();
        for e in v.data.iter_mut() {
            *e = *e * factor;
        }
        self.push(Op::Scale(x, factor), v)
    }

    /// Sum of same-shaped nodes.
    pub fn sum(&mut self, xs: Vec<NodeId>) -> NodeId {
        let mut v = self.value(xs[0]).clone();
        for &x in &xs[1..] {
            v.add_assign(self.value(x));
        }
        self.push(Op::Sum(xs), v)
    }

    /// Gradients of the 1×1 node `root` with respect to every borrowed
    /// parameter tensor (zeros for parameters the root does not depend on).
    pub fn backward(&self, root: NodeId) -> Vec<Tensor<T>> {
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root] = Some(Tensor::filled(1, 1, T::one()));
        let mut param_grads: Vec<Tensor<T>> = self.params.iter().map(|p| Tensor::zeros(p.rows, p.cols)).collect();

        for id in (0..=root).rev() {
            let Some(g) = grads[id].take() else { continue };
            match &self.nodes[id].op {
                Op::Input => {}
                Op::Param(i) => param_grads[*i].add_assign(&g),
                Op::MatMul(a, b) => {
                    let da = matmul_a_bt(&g, self.value(*b));
                    let db = matmul_at_b(self.value(*a), &g);
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::MatMulBt(a, b) => {
                    let da = matmul(&g, self.value(*b));
                    let db = matmul_at_b(&g, self.value(*a));
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::AddBias(x, bias) => {
                    let mut db = Tensor::zeros(1, g.cols);
                    for r in 0..g.rows {
                        for (o, &v) in db.data.iter_mut().zip(g.row(r)) {
                            *o += v;
                        }
                    }
                    accumulate(&mut grads, *bias, db);
                    accumulate(&mut grads, *x, g);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *b, g.clone());
                    accumulate(&mut grads, *a, g);
                }
                Op::Gather(src, rows) => {
                    let s = self.value(*src);
                    let mut ds = Tensor::zeros(s.rows, s.cols);
                    for (r, &i) in rows.iter().enumerate() {
                        for (o, &v) in ds.row_mut(i).iter_mut().zip(g.row(r)) {
                            *o += v;
                        }
                    }
                    accumulate(&mut grads, *src, ds);
                }
                Op::PairRows(x) => {
                    let s = self.value(*x);
                    let d = s.cols;
                    let mut dx = Tensor::zeros(s.rows, d);
                    for i in 0..g.rows {
                        let gr = g.row(i);
                        for c in 0..d {
                            dx.data[i * d + c] += gr[c];
                            dx.data[(i + 1) * d + c] += gr[d + c];
                        }
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::LayerNorm {
                    x,
                    gain,
                    bias,
                    xhat,
                    rstd,
                } => {
                    let (rows, d) = g.shape();
                    let gv = &self.value(*gain).data;
                    let mut dx = Tensor::zeros(rows, d);
                    let mut dg = Tensor::zeros(1, d);
                    let mut db = Tensor::zeros(1, d);
                    let dn = T::of(d as f64);
                    for r in 0..rows {
                        let gr = g.row(r);
                        let xh = &xhat[r * d..(r + 1) * d];
                        let mut mean_dxh = T::zero();
                        let mut mean_dxh_xh = T::zero();
                        for c in 0..d {
                            let dxh = gr[c] * gv[c];
                            mean_dxh += dxh;
                            mean_dxh_xh += dxh * xh[c];
                            dg.data[c] += gr[c] * xh[c];
                            db.data[c] += gr[c];
                        }
                        mean_dxh = mean_dxh / dn;
                        mean_dxh_xh = mean_dxh_xh / dn;
                        for c in 0..d {
                            let dxh = gr[c] * gv[c];
                            dx.data[r * d + c] = rstd[r] * (dxh - mean_dxh - xh[c] * mean_dxh_xh);
                        }
                    }
                    accumulate(&mut grads, *gain, dg);
                    accumulate(&mut grads, *bias, db);
                    accumulate(&mut grads, *x, dx);
                }
                Op::Gelu(x) => {
                    let xv = self.value(*x);
                    let mut dx = g;
                    for (o, &v) in dx.data.iter_mut().zip(&xv.data) {
                        *o = *o * gelu_grad(v);
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::Dropout(x, mask) => {
                    let mut dx = g;
                    for (o, &m) in dx.data.iter_mut().zip(mask) {
                        *o = *o * m;
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::Attention { q, k, v, heads, probs } => {
                    let (dq, dk, dv) = self.attention_backward(*q, *k, *v, *heads, probs, &g);
                    accumulate(&mut grads, *q, dq);
                    accumulate(&mut grads, *k, dk);
                    accumulate(&mut grads, *v, dv);
                }
                Op::CrossEntropy {
                    logits,
                    targets,
                    smoothing,
                    probs,
                } => {
                    let classes = self.value(*logits).cols;
                    let upstream = g.data[0];
                    let uniform = *smoothing / T::of(classes as f64);
                    let mut dl = Tensor::from_vec(targets.len(), classes, probs.clone());
                    for (r, &t) in targets.iter().enumerate() {
                        let row = dl.row_mut(r);
                        row[t] = row[t] - (T::one() - *smoothing);
                        for e in row.iter_mut() {
                            *e = (*e - uniform) * upstream;
                        }
                    }
                    accumulate(&mut grads, *logits, dl);
                }
                Op::Scale(x, factor) => {
                    let mut dx = g;
                    for e in dx.data.iter_mut() {
                        *e = *e * *factor;
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::Sum(xs) => {
                    for &x in xs {
                        accumulate(&mut grads, x, g.clone());
                    }
                }
            }
        }
        param_grads
    }

    fn attention_backward(
        &self,
        q: NodeId,
        k: NodeId,
        v: NodeId,
        heads: usize,
        probs: &[T],
        g: &Tensor<T>,
    ) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let (n, d) = qv.shape();
        let m = kv.rows;
        let dh = d / heads;
        let scale = T::of(1.0 / (dh as f64).sqrt());
        let mut dq = Tensor::zeros(n, d);
        let mut dk = Tensor::zeros(m, d);
        let mut dv = Tensor::zeros(m, d);
        let mut ds = vec![T::zero(); m];
        for h in 0..heads {
            let c0 = h * dh;
            for i in 0..n {
                let p = &probs[(h * n + i) * m..(h * n + i + 1) * m];
                let go = &g.row(i)[c0..c0 + dh];
                let mut weighted = T::zero();
                for j in 0..m {
                    let dp = dot(go, &vv.row(j)[c0..c0 + dh]);
                    ds[j] = dp;
                    weighted += p[j] * dp;
                    let dvrow = &mut dv.data[j * d + c0..j * d + c0 + dh];
                    for (o, &x) in dvrow.iter_mut().zip(go) {
                        *o += p[j] * x;
                    }
                }
                for j in 0..m {
                    let s = p[j] * (ds[j] - weighted) * scale;
                    if s == T::zero() {
                        continue;
                    }
                    let krow = &kv.row(j)[c0..c0 + dh];
                    let qrow = &qv.row(i)[c0..c0 + dh];
                    let dqrow = &mut dq.data[i * d + c0..i * d + c0 + dh];
                    for (o, &x) in dqrow.iter_mut().zip(krow) {
                        *o += s * x;
                    }
                    let dkrow = &mut dk.data[j * d + c0..j * d + c0 + dh];
                    for (o, &x) in dkrow.iter_mut().zip(qrow) {
                        *o += s * x;
                    }
                }
            }
        }
        (dq, dk, dv)
    }
}

fn accumulate<T: Scalar>(grads: &mut [Option<Tensor<T>>], id: NodeId, g: Tensor<T>) {
    match &mut grads[id] {
        Some(existing) => existing.add_assign(&g),
        slot => *slot = Some(g),
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

fn gelu<T: Scalar>(x: T) -> T {
    let inner = T::of(GELU_C) * (x + T::of(0.044715) * x * x * x);
    T::of(0.5) * x * (T::one() + inner.tanh())
}

fn gelu_grad<T: Scalar>(x: T) -> T {
    let inner = T::of(GELU_C) * (x + T::of(0.044715) * x * x * x);
    let t = inner.tanh();
    let dinner = T::of(GELU_C) * (T::one() + T::of(3.0 * 0.044715) * x * x);
    T::of(0.5) * (T::one() + t) + T::of(0.5) * x * (T::one() - t * t) * dinner
}
