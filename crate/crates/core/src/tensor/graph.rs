use super::{gelu, gelu_grad, matmul_raw, Gradients, ParamId, ParamStore, Tensor};
use crate::error::{ensure_arg, Error, Result};

/// Handle to a node recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Input,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    AddBias(Var, Var),
    Scale(Var, f64),
    Gelu(Var),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    GatherRows(Var, Vec<usize>),
    Attention {
        q: Var,
        k: Var,
        v: Var,
        seq_len: usize,
        n_heads: usize,
        probs: Vec<f64>,
    },
    Mse(Var, Var),
    Sum(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    /// Whether any parameter feeds into this node.
    tracked: bool,
}

impl Op {
    fn parents(&self) -> Vec<Var> {
        match self {
            Op::Input | Op::Param(_) => Vec::new(),
            Op::MatMul(a, b) | Op::Add(a, b) | Op::Sub(a, b) | Op::AddBias(a, b) | Op::Mse(a, b) => {
                vec![*a, *b]
            }
            Op::Scale(x, _) | Op::Gelu(x) | Op::Softmax(x) | Op::GatherRows(x, _) | Op::Sum(x) => vec![*x],
            Op::LayerNorm { x, gamma, beta, .. } => vec![*x, *gamma, *beta],
            Op::ConcatCols(p) | Op::ConcatRows(p) => p.clone(),
            Op::Attention { q, k, v, .. } => vec![*q, *k, *v],
        }
    }
}

/// A tape of recorded operations. Nodes are appended after their parents, so
/// the recording order is already a topological order.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn shape_err<T>(op: &str, a: &[usize], b: &[usize]) -> Result<T> {
    Err(Error::Argument(format!(
        "{op}: incompatible shapes {a:?} and {b:?}"
    )))
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

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        debug_assert!(value.all_finite(), "non-finite value produced by {op:?}");
        let tracked = matches!(op, Op::Param(_)) || op.parents().iter().any(|p| self.nodes[p.0].tracked);
        self.nodes.push(Node { value, op, tracked });
        Var(self.nodes.len() - 1)
    }

    fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn require_matrix(&self, op: &str, v: Var) -> Result<(usize, usize)> {
        let t = &self.nodes[v.0].value;
        ensure_arg!(t.is_matrix(), "{op}: expected rank-2 tensor, got {:?}", t.shape());
        Ok((t.rows(), t.cols()))
    }

    /// A constant leaf. Receives no gradient.
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Input)
    }

    /// A leaf bound to a parameter; its gradient is reported by [`Graph::backward`].
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.push(store.get(id).clone(), Op::Param(id))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.require_matrix("matmul", a)?;
        let (k2, n) = self.require_matrix("matmul", b)?;
        if k != k2 {
            return shape_err("matmul", self.shape(a), self.shape(b));
        }
        let out = matmul_raw(self.value(a).data(), self.value(b).data(), m, k, n);
        Ok(self.push(Tensor::matrix(m, n, out)?, Op::MatMul(a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return shape_err("add", self.shape(a), self.shape(b));
        }
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return shape_err("sub", self.shape(a), self.shape(b));
        }
        let mut out = self.value(a).clone();
        for (o, bv) in out.data_mut().iter_mut().zip(self.value(b).data()) {
            *o -= bv;
        }
        Ok(self.push(out, Op::Sub(a, b)))
    }

    /// Adds a bias vector (any shape with `cols` elements) to every row of `x`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (_, n) = self.require_matrix("add_bias", x)?;
        if self.value(bias).numel() != n {
            return shape_err("add_bias", self.shape(x), self.shape(bias));
        }
        let mut out = self.value(x).clone();
        let b = self.value(bias).data();
        for row in out.data_mut().chunks_mut(n) {
            for (o, bv) in row.iter_mut().zip(b) {
                *o += bv;
            }
        }
        Ok(self.push(out, Op::AddBias(x, bias)))
    }

    /// `x · w + b`.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xw = self.matmul(x, w)?;
        self.add_bias(xw, b)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let mut out = self.value(x).clone();
        out.data_mut().iter_mut().for_each(|v| *v *= c);
        self.push(out, Op::Scale(x, c))
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let mut out = self.value(x).clone();
        out.data_mut().iter_mut().for_each(|v| *v = gelu(*v));
        self.push(out, Op::Gelu(x))
    }

    /// Row-wise softmax.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let (_, n) = self.require_matrix("softmax", x)?;
        let mut out = self.value(x).clone();
        for row in out.data_mut().chunks_mut(n) {
            softmax_in_place(row);
        }
        Ok(self.push(out, Op::Softmax(x)))
    }

    /// Row-wise layer normalization with biased variance, followed by the
    /// elementwise affine `gamma * xhat + beta`.
    pub fn layernorm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let (m, n) = self.require_matrix("layernorm", x)?;
        ensure_arg!(
            self.value(gamma).numel() == n && self.value(beta).numel() == n,
            "layernorm: gamma/beta must have {n} elements"
        );
        let xv = self.value(x).data();
        let g = self.value(gamma).data();
        let bt = self.value(beta).data();
        let mut xhat = vec![0.0; m * n];
        let mut rstd = vec![0.0; m];
        let mut out = vec![0.0; m * n];
        for r in 0..m {
            let row = &xv[r * n..(r + 1) * n];
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let rs = 1.0 / (var + eps).sqrt();
            rstd[r] = rs;
            for c in 0..n {
                let h = (row[c] - mean) * rs;
                xhat[r * n + c] = h;
                out[r * n + c] = h * g[c] + bt[c];
            }
        }
        let out = Tensor::matrix(m, n, out)?;
        Ok(self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            },
        ))
    }

    /// Concatenates matrices side by side (same row count).
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        ensure_arg!(!parts.is_empty(), "concat_cols: no inputs");
        let (m, _) = self.require_matrix("concat_cols", parts[0])?;
        let mut total = 0;
        for &p in parts {
            let (pm, pn) = self.require_matrix("concat_cols", p)?;
            if pm != m {
                return shape_err("concat_cols", self.shape(parts[0]), self.shape(p));
            }
            total += pn;
        }
        let mut out = Vec::with_capacity(m * total);
        for r in 0..m {
            for &p in parts {
                out.extend_from_slice(self.value(p).row(r));
            }
        }
        Ok(self.push(Tensor::matrix(m, total, out)?, Op::ConcatCols(parts.to_vec())))
    }

    /// Stacks matrices vertically (same column count).
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        ensure_arg!(!parts.is_empty(), "concat_rows: no inputs");
        let (_, n) = self.require_matrix("concat_rows", parts[0])?;
        let mut rows = 0;
        let mut out = Vec::new();
        for &p in parts {
            let (pm, pn) = self.require_matrix("concat_rows", p)?;
            if pn != n {
                return shape_err("concat_rows", self.shape(parts[0]), self.shape(p));
            }
            rows += pm;
            out.extend_from_slice(self.value(p).data());
        }
        Ok(self.push(Tensor::matrix(rows, n, out)?, Op::ConcatRows(parts.to_vec())))
    }

    /// Selects rows by index; indices may repeat.
    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let (m, n) = self.require_matrix("gather_rows", x)?;
        let mut out = Vec::with_capacity(idx.len() * n);
        for &i in idx {
            ensure_arg!(i < m, "gather_rows: row {i} out of range {m}");
            out.extend_from_slice(self.value(x).row(i));
        }
        Ok(self.push(
            Tensor::matrix(idx.len(), n, out)?,
            Op::GatherRows(x, idx.to_vec()),
        ))
    }

    /// Multi-head scaled dot-product self-attention over independent blocks of
    /// `seq_len` consecutive rows. `q`, `k`, `v` are `(blocks * seq_len) × d`
    /// with `d` divisible by `n_heads`; heads occupy contiguous column ranges.
    pub fn attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        seq_len: usize,
        n_heads: usize,
    ) -> Result<Var> {
        let (m, d) = self.require_matrix("attention", q)?;
        if self.shape(k) != self.shape(q) || self.shape(v) != self.shape(q) {
            return shape_err("attention", self.shape(q), self.shape(k));
        }
        ensure_arg!(
            seq_len > 0 && m % seq_len == 0,
            "attention: {m} rows not divisible by seq_len {seq_len}"
        );
        ensure_arg!(
            n_heads > 0 && d % n_heads == 0,
            "attention: width {d} not divisible by {n_heads} heads"
        );
        let blocks = m / seq_len;
        let dh = d / n_heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let (qv, kv, vv) = (self.value(q).data(), self.value(k).data(), self.value(v).data());
        let mut probs = vec![0.0; blocks * n_heads * seq_len * seq_len];
        let mut out = vec![0.0; m * d];
        for b in 0..blocks {
            let base = b * seq_len;
            for h in 0..n_heads {
                let c0 = h * dh;
                let pbase = (b * n_heads + h) * seq_len * seq_len;
                for i in 0..seq_len {
                    let qi = &qv[(base + i) * d + c0..(base + i) * d + c0 + dh];
                    let prow = &mut probs[pbase + i * seq_len..pbase + (i + 1) * seq_len];
                    for (j, p) in prow.iter_mut().enumerate() {
                        let kj = &kv[(base + j) * d + c0..(base + j) * d + c0 + dh];
                        *p = dot(qi, kj) * scale;
                    }
                    softmax_in_place(prow);
                    let orow = &mut out[(base + i) * d + c0..(base + i) * d + c0 + dh];
                    for (j, &p) in prow.iter().enumerate() {
                        let vj = &vv[(base + j) * d + c0..(base + j) * d + c0 + dh];
                        for (o, x) in orow.iter_mut().zip(vj) {
                            *o += p * x;
                        }
                    }
                }
            }
        }
        Ok(self.push(
            Tensor::matrix(m, d, out)?,
            Op::Attention {
                q,
                k,
                v,
                seq_len,
                n_heads,
                probs,
            },
        ))
    }

    /// Mean of squared elementwise differences, as a `1×1` tensor.
    pub fn mse(&mut self, pred: Var, target: Var) -> Result<Var> {
        if self.shape(pred) != self.shape(target) {
            return shape_err("mse", self.shape(pred), self.shape(target));
        }
        let a = self.value(pred).data();
        let b = self.value(target).data();
        ensure_arg!(!a.is_empty(), "mse: empty input");
        let s: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
        let n = a.len() as f64;
        Ok(self.push(Tensor::scalar(s / n), Op::Mse(pred, target)))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(x))
    }

    /// Reverse sweep from a scalar `loss`. Parameters that the loss does not
    /// depend on get exactly zero gradient.
    pub fn backward(&self, loss: Var, store: &ParamStore) -> Result<Gradients> {
        ensure_arg!(
            self.value(loss).numel() == 1,
            "backward needs a scalar loss, got shape {:?}",
            self.shape(loss)
        );
        let mut grads: Vec<Option<Tensor>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.shape(loss), 1.0));
        let mut out = Gradients::zeros_like(store);

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            if !self.nodes[idx].tracked {
                continue;
            }
            let node = &self.nodes[idx];
            match &node.op {
                Op::Input => {}
                Op::Param(id) => out.accumulate(*id, &g),
                Op::MatMul(a, b) => {
                    let av = self.value(*a);
                    let bv = self.value(*b);
                    let (m, k, n) = (av.rows(), av.cols(), bv.cols());
                    let (ad, bd, gd) = (av.data(), bv.data(), g.data());
                    if self.nodes[a.0].tracked {
                        // dA = G Bᵀ
                        let mut bt = vec![0.0; n * k];
                        for p in 0..k {
                            for j in 0..n {
                                bt[j * k + p] = bd[p * n + j];
                            }
                        }
                        let da = matmul_raw(gd, &bt, m, n, k);
                        accumulate(&mut grads, *a, Tensor::matrix(m, k, da)?);
                    }
                    if self.nodes[b.0].tracked {
                        // dB = Aᵀ G
                        let mut db = vec![0.0; k * n];
                        for i in 0..m {
                            let g_row = &gd[i * n..(i + 1) * n];
                            for p in 0..k {
                                let a_ip = ad[i * k + p];
                                if a_ip == 0.0 {
                                    continue;
                                }
                                for (o, x) in db[p * n..(p + 1) * n].iter_mut().zip(g_row) {
                                    *o += a_ip * x;
                                }
                            }
                        }
                        accumulate(&mut grads, *b, Tensor::matrix(k, n, db)?);
                    }
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g);
                }
                Op::Sub(a, b) => {
                    let mut neg = g.clone();
                    neg.data_mut().iter_mut().for_each(|v| *v = -*v);
                    accumulate(&mut grads, *a, g);
                    accumulate(&mut grads, *b, neg);
                }
                Op::AddBias(x, bias) => {
                    let n = g.cols();
                    let mut db = vec![0.0; n];
                    for row in g.data().chunks(n) {
                        for (o, v) in db.iter_mut().zip(row) {
                            *o += v;
                        }
                    }
                    let db = Tensor::new(self.shape(*bias).to_vec(), db)?;
                    accumulate(&mut grads, *x, g);
                    accumulate(&mut grads, *bias, db);
                }
                Op::Scale(x, c) => {
                    let mut gx = g;
                    gx.data_mut().iter_mut().for_each(|v| *v *= c);
                    accumulate(&mut grads, *x, gx);
                }
                Op::Gelu(x) => {
                    let mut gx = g;
                    for (gv, xv) in gx.data_mut().iter_mut().zip(self.value(*x).data()) {
                        *gv *= gelu_grad(*xv);
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::Softmax(x) => {
                    let y = &node.value;
                    let n = y.cols();
                    let mut gx = g;
                    for (grow, yrow) in gx.data_mut().chunks_mut(n).zip(y.data().chunks(n)) {
                        softmax_backward_in_place(grow, yrow);
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::LayerNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    rstd,
                } => {
                    let n = g.cols();
                    let m = g.rows();
                    let gam = self.value(*gamma).data();
                    let gd = g.data();
                    let mut dx = vec![0.0; m * n];
                    let mut dgamma = vec![0.0; n];
                    let mut dbeta = vec![0.0; n];
                    let mut dxhat = vec![0.0; n];
                    for r in 0..m {
                        let grow = &gd[r * n..(r + 1) * n];
                        let hrow = &xhat[r * n..(r + 1) * n];
                        let mut sum_d = 0.0;
                        let mut sum_dh = 0.0;
                        for c in 0..n {
                            dgamma[c] += grow[c] * hrow[c];
                            dbeta[c] += grow[c];
                            dxhat[c] = grow[c] * gam[c];
                            sum_d += dxhat[c];
                            sum_dh += dxhat[c] * hrow[c];
                        }
                        let k = rstd[r] / n as f64;
                        for c in 0..n {
                            dx[r * n + c] =
                                k * (n as f64 * dxhat[c] - sum_d - hrow[c] * sum_dh);
                        }
                    }
                    accumulate(&mut grads, *x, Tensor::matrix(m, n, dx)?);
                    let gshape = self.shape(*gamma).to_vec();
                    let bshape = self.shape(*beta).to_vec();
                    accumulate(&mut grads, *gamma, Tensor::new(gshape, dgamma)?);
                    accumulate(&mut grads, *beta, Tensor::new(bshape, dbeta)?);
                }
                Op::ConcatCols(parts) => {
                    let m = g.rows();
                    let total = g.cols();
                    let mut offset = 0;
                    for &p in parts {
                        let pn = self.value(p).cols();
                        let mut gp = Vec::with_capacity(m * pn);
                        for r in 0..m {
                            gp.extend_from_slice(&g.data()[r * total + offset..r * total + offset + pn]);
                        }
                        offset += pn;
                        accumulate(&mut grads, p, Tensor::matrix(m, pn, gp)?);
                    }
                }
                Op::ConcatRows(parts) => {
                    let n = g.cols();
                    let mut row = 0;
                    for &p in parts {
                        let pm = self.value(p).rows();
                        let gp = g.data()[row * n..(row + pm) * n].to_vec();
                        row += pm;
                        accumulate(&mut grads, p, Tensor::matrix(pm, n, gp)?);
                    }
                }
                Op::GatherRows(x, idx) => {
                    let xs = self.value(*x);
                    let n = xs.cols();
                    let mut gx = Tensor::zeros(xs.shape());
                    for (r, &i) in idx.iter().enumerate() {
                        let src = &g.data()[r * n..(r + 1) * n];
                        for (o, v) in gx.data_mut()[i * n..(i + 1) * n].iter_mut().zip(src) {
                            *o += v;
                        }
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::Attention {
                    q,
                    k,
                    v,
                    seq_len,
                    n_heads,
                    probs,
                } => {
                    let (gq, gk, gv) = self.attention_backward(
                        &g, *q, *k, *v, *seq_len, *n_heads, probs,
                    )?;
                    accumulate(&mut grads, *q, gq);
                    accumulate(&mut grads, *k, gk);
                    accumulate(&mut grads, *v, gv);
                }
                Op::Mse(a, b) => {
                    let up = g.item();
                    let av = self.value(*a);
                    let bv = self.value(*b);
                    let c = 2.0 * up / av.numel() as f64;
                    let da: Vec<f64> = av
                        .data()
                        .iter()
                        .zip(bv.data())
                        .map(|(x, y)| c * (x - y))
                        .collect();
                    let db: Vec<f64> = da.iter().map(|v| -v).collect();
                    accumulate(&mut grads, *a, Tensor::new(av.shape().to_vec(), da)?);
                    accumulate(&mut grads, *b, Tensor::new(bv.shape().to_vec(), db)?);
                }
                Op::Sum(x) => {
                    let up = g.item();
                    accumulate(&mut grads, *x, Tensor::full(self.shape(*x), up));
                }
            }
        }
        Ok(out)
    }

    #[allow(clippy::too_many_arguments)]
    fn attention_backward(
        &self,
        g: &Tensor,
        q: Var,
        k: Var,
        v: Var,
        seq_len: usize,
        n_heads: usize,
        probs: &[f64],
    ) -> Result<(Tensor, Tensor, Tensor)> {
        let qt = self.value(q);
        let (m, d) = (qt.rows(), qt.cols());
        let blocks = m / seq_len;
        let dh = d / n_heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let (qv, kv, vv, gd) = (
            qt.data(),
            self.value(k).data(),
            self.value(v).data(),
            g.data(),
        );
        let mut dq = vec![0.0; m * d];
        let mut dk = vec![0.0; m * d];
        let mut dv = vec![0.0; m * d];
        let mut dp = vec![0.0; seq_len];
        for b in 0..blocks {
            let base = b * seq_len;
            for h in 0..n_heads {
                let c0 = h * dh;
                let pbase = (b * n_heads + h) * seq_len * seq_len;
                for i in 0..seq_len {
                    let gi = &gd[(base + i) * d + c0..(base + i) * d + c0 + dh];
                    let prow = &probs[pbase + i * seq_len..pbase + (i + 1) * seq_len];
                    for j in 0..seq_len {
                        let vj = &vv[(base + j) * d + c0..(base + j) * d + c0 + dh];
                        dp[j] = dot(gi, vj);
                        let p = prow[j];
                        for (o, x) in dv[(base + j) * d + c0..(base + j) * d + c0 + dh]
                            .iter_mut()
                            .zip(gi)
                        {
                            *o += p * x;
                        }
                    }
                    softmax_backward_in_place(&mut dp, prow);
                    for j in 0..seq_len {
                        let ds = dp[j] * scale;
                        if ds == 0.0 {
                            continue;
                        }
                        let ri = (base + i) * d + c0;
                        let rj = (base + j) * d + c0;
                        for c in 0..dh {
                            dq[ri + c] += ds * kv[rj + c];
                            dk[rj + c] += ds * qv[ri + c];
                        }
                    }
                }
            }
        }
        Ok((
            Tensor::matrix(m, d, dq)?,
            Tensor::matrix(m, d, dk)?,
            Tensor::matrix(m, d, dv)?,
        ))
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}

/// Turns `dy` into `dx` for `y = softmax(x)`: `dx = y * (dy - <y, dy>)`.
fn softmax_backward_in_place(dy: &mut [f64], y: &[f64]) {
    let inner = dot(dy, y);
    for (g, p) in dy.iter_mut().zip(y) {
        *g = p * (*g - inner);
    }
}
