use std::collections::HashMap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::kernels;
use super::{ParamId, ParamStore, Tensor};
use crate::error::{Error, Result};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    OneMinus(Var),
    Tanh(Var),
    Sigmoid(Var),
    AddBias(Var, Var),
    MulConst(Var, Vec<f64>),
    Gather {
        table: Var,
        ids: Vec<usize>,
    },
    ConcatCols(Var, Var),
    ConcatRows(Vec<Var>),
    Stack(Vec<Var>),
    AttnScores {
        query: Var,
        keys: Var,
    },
    MaskedSoftmax {
        scores: Var,
    },
    WeightedSum {
        weights: Var,
        values: Var,
    },
    SoftmaxXent {
        logits: Var,
        targets: Vec<usize>,
        mask: Vec<bool>,
        probs: Vec<f64>,
    },
    Sum(Var),
}

#[derive(Debug)]
struct Node {
    value: Arc<Tensor>,
    op: Op,
    requires_grad: bool,
    param: Option<ParamId>,
}

/// A define-by-run computation record.
///
/// Nodes are appended in execution order, so the node list is already a
/// topological order; backward walks it in reverse exactly once. A graph is
/// meant to be rebuilt for every batch.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
    dropout: Option<(f64, ChaCha8Rng)>,
}

fn dim_err(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::Dimension {
        op,
        left: a.shape().to_vec(),
        right: b.shape().to_vec(),
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    /// A graph whose [`Graph::dropout`] calls zero activations with
    /// probability `rate`, using a stream seeded by `seed`.
    pub fn with_dropout(rate: f64, seed: u64) -> Self {
        let mut g = Self::new();
        if rate > 0.0 {
            g.dropout = Some((rate, ChaCha8Rng::seed_from_u64(seed)));
        }
        g
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

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value: Arc::new(value),
            op,
            requires_grad,
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// A leaf that receives a gradient.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A leaf excluded from differentiation.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Fetches a parameter as a leaf; repeated fetches return the same node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        self.nodes.push(Node {
            value: store.shared_value(id),
            op: Op::Leaf,
            requires_grad: true,
            param: Some(id),
        });
        let v = Var(self.nodes.len() - 1);
        self.params.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::MatMul(a, b), rg))
    }

    fn zip_same(&mut self, name: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(dim_err(name, ta, tb));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        let out = Tensor::new(ta.shape().to_vec(), data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    fn map(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let t = self.value(a);
        let data = t.data().iter().map(|&x| f(x)).collect();
        let out = Tensor {
            shape: t.shape().to_vec(),
            data,
        };
        let rg = self.rg(a);
        self.push(out, op, rg)
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        self.map(a, |x| k * x, Op::Scale(a, k))
    }

    /// `1 - a`
    pub fn one_minus(&mut self, a: Var) -> Var {
        self.map(a, |x| 1.0 - x, Op::OneMinus(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.map(a, f64::tanh, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.map(a, kernels::sigmoid, Op::Sigmoid(a))
    }

    /// Adds a length-`n` bias to every row of a `rows × n` matrix.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (tx, tb) = (self.value(x), self.value(bias));
        let n = tx.cols();
        if tx.shape().len() != 2 || tb.len() != n {
            return Err(dim_err("add_bias", tx, tb));
        }
        let mut data = tx.data().to_vec();
        for row in data.chunks_mut(n) {
            for (v, b) in row.iter_mut().zip(tb.data()) {
                *v += b;
            }
        }
        let out = Tensor {
            shape: tx.shape().to_vec(),
            data,
        };
        let rg = self.rg(x) || self.rg(bias);
        Ok(self.push(out, Op::AddBias(x, bias), rg))
    }

    /// Elementwise product with a fixed multiplier (dropout masks).
    pub fn mul_const(&mut self, x: Var, factors: Vec<f64>) -> Result<Var> {
        let tx = self.value(x);
        if factors.len() != tx.len() {
            return Err(Error::Dimension {
                op: "mul_const",
                left: tx.shape().to_vec(),
                right: vec![factors.len()],
            });
        }
        let data = tx.data().iter().zip(&factors).map(|(a, b)| a * b).collect();
        let out = Tensor {
            shape: tx.shape().to_vec(),
            data,
        };
        let rg = self.rg(x);
        Ok(self.push(out, Op::MulConst(x, factors), rg))
    }

    /// Inverted dropout; the identity when the graph has no dropout stream.
    pub fn dropout(&mut self, x: Var) -> Result<Var> {
        let Some((rate, rng)) = self.dropout.as_mut() else {
            return Ok(x);
        };
        let rate = *rate;
        let keep = 1.0 / (1.0 - rate);
        let n = self.nodes[x.0].value.len();
        let mask = (0..n)
            .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
            .collect();
        self.mul_const(x, mask)
    }

    /// Selects rows of a `V × n` table: the embedding lookup.
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let t = self.value(table);
        if t.shape().len() != 2 {
            return Err(Error::Contract("gather_rows expects a matrix".into()));
        }
        let (v, n) = (t.rows(), t.cols());
        if ids.is_empty() {
            return Err(Error::Contract("gather_rows with no ids".into()));
        }
        let mut data = Vec::with_capacity(ids.len() * n);
        for &id in ids {
            if id >= v {
                return Err(Error::Index {
                    context: "embedding lookup",
                    index: id,
                    size: v,
                });
            }
            data.extend_from_slice(t.row(id));
        }
        let out = Tensor {
            shape: vec![ids.len(), n],
            data,
        };
        let rg = self.rg(table);
        Ok(self.push(
            out,
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
            rg,
        ))
    }

    /// `[a | b]` for two matrices with equal row counts.
    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape().len() != 2 || tb.shape().len() != 2 || ta.rows() != tb.rows() {
            return Err(dim_err("concat_cols", ta, tb));
        }
        let (ca, cb) = (ta.cols(), tb.cols());
        let mut data = Vec::with_capacity(ta.len() + tb.len());
        for r in 0..ta.rows() {
            data.extend_from_slice(ta.row(r));
            data.extend_from_slice(tb.row(r));
        }
        let out = Tensor {
            shape: vec![ta.rows(), ca + cb],
            data,
        };
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::ConcatCols(a, b), rg))
    }

    /// Vertically stacks matrices with equal column counts.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::Contract("concat_rows of nothing".into()))?;
        let cols = self.value(first).cols();
        let mut rows = 0;
        let mut data = Vec::new();
        for &p in parts {
            let t = self.value(p);
            if t.shape().len() != 2 || t.cols() != cols {
                return Err(dim_err("concat_rows", self.value(first), t));
            }
            rows += t.rows();
            data.extend_from_slice(t.data());
        }
        let out = Tensor {
            shape: vec![rows, cols],
            data,
        };
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(out, Op::ConcatRows(parts.to_vec()), rg))
    }

    /// Stacks `S` matrices of shape `B × n` into a `S × B × n` tensor.
    pub fn stack(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::Contract("stack of nothing".into()))?;
        let inner = self.value(first).shape().to_vec();
        let mut data = Vec::new();
        for &p in parts {
            let t = self.value(p);
            if t.shape() != inner.as_slice() {
                return Err(dim_err("stack", self.value(first), t));
            }
            data.extend_from_slice(t.data());
        }
        let mut shape = vec![parts.len()];
        shape.extend_from_slice(&inner);
        let out = Tensor { shape, data };
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(out, Op::Stack(parts.to_vec()), rg))
    }

    /// `out[b, s] = query[b] · keys[s, b]`
    pub fn attn_scores(&mut self, query: Var, keys: Var) -> Result<Var> {
        let (tq, tk) = (self.value(query), self.value(keys));
        let ks = tk.shape();
        if tq.shape().len() != 2 || ks.len() != 3 || ks[1] != tq.rows() || ks[2] != tq.cols() {
            return Err(dim_err("attn_scores", tq, tk));
        }
        let (s_len, b_len, n) = (ks[0], ks[1], ks[2]);
        let mut data = vec![0.0; b_len * s_len];
        for b in 0..b_len {
            let q = tq.row(b);
            for s in 0..s_len {
                let k = &tk.data()[(s * b_len + b) * n..(s * b_len + b + 1) * n];
                data[b * s_len + s] = q.iter().zip(k).map(|(x, y)| x * y).sum();
            }
        }
        let out = Tensor {
            shape: vec![b_len, s_len],
            data,
        };
        let rg = self.rg(query) || self.rg(keys);
        Ok(self.push(out, Op::AttnScores { query, keys }, rg))
    }

    /// Row softmax restricted to positions where `mask` is true; masked
    /// positions get weight exactly zero.
    pub fn masked_softmax(&mut self, scores: Var, mask: &[bool]) -> Result<Var> {
        let t = self.value(scores);
        if t.shape().len() != 2 || mask.len() != t.len() {
            return Err(Error::Dimension {
                op: "masked_softmax",
                left: t.shape().to_vec(),
                right: vec![mask.len()],
            });
        }
        let cols = t.cols();
        let mut data = vec![0.0; t.len()];
        for (r, (row, mrow)) in t.data().chunks(cols).zip(mask.chunks(cols)).enumerate() {
            let max = row
                .iter()
                .zip(mrow)
                .filter(|(_, &m)| m)
                .map(|(&v, _)| v)
                .fold(f64::NEG_INFINITY, f64::max);
            if max == f64::NEG_INFINITY {
                return Err(Error::Contract(format!("attention row {r} has no unmasked position")));
            }
            let out = &mut data[r * cols..(r + 1) * cols];
            let mut total = 0.0;
            for ((o, &v), &m) in out.iter_mut().zip(row).zip(mrow) {
                if m {
                    *o = (v - max).exp();
                    total += *o;
                }
            }
            out.iter_mut().for_each(|o| *o /= total);
        }
        let out = Tensor {
            shape: t.shape().to_vec(),
            data,
        };
        let rg = self.rg(scores);
        Ok(self.push(out, Op::MaskedSoftmax { scores }, rg))
    }

    /// `out[b] = Σ_s weights[b, s] · values[s, b]`
    pub fn weighted_sum(&mut self, weights: Var, values: Var) -> Result<Var> {
        let (tw, tv) = (self.value(weights), self.value(values));
        let vs = tv.shape();
        if tw.shape().len() != 2 || vs.len() != 3 || vs[0] != tw.cols() || vs[1] != tw.rows() {
            return Err(dim_err("weighted_sum", tw, tv));
        }
        let (s_len, b_len, n) = (vs[0], vs[1], vs[2]);
        let mut data = vec![0.0; b_len * n];
        for b in 0..b_len {
            let out = &mut data[b * n..(b + 1) * n];
            for s in 0..s_len {
                let w = tw.data()[b * s_len + s];
                let v = &tv.data()[(s * b_len + b) * n..(s * b_len + b + 1) * n];
                for (o, x) in out.iter_mut().zip(v) {
                    *o += w * x;
                }
            }
        }
        let out = Tensor {
            shape: vec![b_len, n],
            data,
        };
        let rg = self.rg(weights) || self.rg(values);
        Ok(self.push(out, Op::WeightedSum { weights, values }, rg))
    }

    /// `Σ_r mask[r] · -log softmax(logits[r])[targets[r]]` as a scalar.
    pub fn softmax_cross_entropy(&mut self, logits: Var, targets: &[usize], mask: &[bool]) -> Result<Var> {
        let t = self.value(logits);
        if t.shape().len() != 2 || targets.len() != t.rows() || mask.len() != t.rows() {
            return Err(Error::Dimension {
                op: "softmax_cross_entropy",
                left: t.shape().to_vec(),
                right: vec![targets.len(), mask.len()],
            });
        }
        let v = t.cols();
        let mut probs = vec![0.0; t.len()];
        let mut loss = 0.0;
        for (r, (&target, &m)) in targets.iter().zip(mask).enumerate() {
            if !m {
                continue;
            }
            if target >= v {
                return Err(Error::Index {
                    context: "softmax_cross_entropy target",
                    index: target,
                    size: v,
                });
            }
            let row = t.row(r);
            let lse = kernels::log_sum_exp(row);
            loss += lse - row[target];
            for (p, &x) in probs[r * v..(r + 1) * v].iter_mut().zip(row) {
                *p = (x - lse).exp();
            }
        }
        let rg = self.rg(logits);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::SoftmaxXent {
                logits,
                targets: targets.to_vec(),
                mask: mask.to_vec(),
                probs,
            },
            rg,
        ))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let total = self.value(a).data().iter().sum();
        let rg = self.rg(a);
        self.push(Tensor::scalar(total), Op::Sum(a), rg)
    }

    /// Reverse pass from a scalar loss.
    ///
    /// Returns the gradients of every differentiable leaf reachable from
    /// `loss`. Calling it again on the same graph recomputes them from
    /// scratch; accumulation across calls happens in [`ParamStore`].
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lt = self.value(loss);
        if lt.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                lt.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        let mut out = Gradients::default();

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            if let Op::Leaf = node.op {
                out.insert(Var(i), node.param, Tensor::new(node.value.shape().to_vec(), g)?);
                continue;
            }
            self.propagate(node, &g, &mut grads);
        }
        Ok(out)
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        // Returns the gradient buffer of an input, or None if it needs none.
        macro_rules! buf {
            ($v:expr) => {{
                let v: Var = $v;
                if self.nodes[v.0].requires_grad {
                    Some(
                        grads[v.0]
                            .get_or_insert_with(|| vec![0.0; self.nodes[v.0].value.len()])
                            .as_mut_slice(),
                    )
                } else {
                    None
                }
            }};
        }
        let y = node.value.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
                if let Some(ga) = buf!(*a) {
                    kernels::matmul_grad_lhs(g, tb.data(), ga, m, k, n);
                }
                if let Some(gb) = buf!(*b) {
                    kernels::matmul_grad_rhs(ta.data(), g, gb, m, k, n);
                }
            }
            Op::Add(a, b) => {
                for (v, sign) in [(*a, 1.0), (*b, 1.0)] {
                    if let Some(gv) = buf!(v) {
                        gv.iter_mut().zip(g).for_each(|(o, x)| *o += sign * x);
                    }
                }
            }
            Op::Sub(a, b) => {
                for (v, sign) in [(*a, 1.0), (*b, -1.0)] {
                    if let Some(gv) = buf!(v) {
                        gv.iter_mut().zip(g).for_each(|(o, x)| *o += sign * x);
                    }
                }
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a).data(), self.value(*b).data());
                if let Some(ga) = buf!(*a) {
                    for ((o, x), w) in ga.iter_mut().zip(g).zip(tb) {
                        *o += x * w;
                    }
                }
                if let Some(gb) = buf!(*b) {
                    for ((o, x), w) in gb.iter_mut().zip(g).zip(ta) {
                        *o += x * w;
                    }
                }
            }
            Op::Scale(a, k) => {
                if let Some(ga) = buf!(*a) {
                    ga.iter_mut().zip(g).for_each(|(o, x)| *o += k * x);
                }
            }
            Op::OneMinus(a) => {
                if let Some(ga) = buf!(*a) {
                    ga.iter_mut().zip(g).for_each(|(o, x)| *o -= x);
                }
            }
            Op::Tanh(a) => {
                if let Some(ga) = buf!(*a) {
                    for ((o, x), t) in ga.iter_mut().zip(g).zip(y) {
                        *o += x * (1.0 - t * t);
                    }
                }
            }
            Op::Sigmoid(a) => {
                if let Some(ga) = buf!(*a) {
                    for ((o, x), s) in ga.iter_mut().zip(g).zip(y) {
                        *o += x * s * (1.0 - s);
                    }
                }
            }
            Op::AddBias(x, bias) => {
                let n = self.value(*bias).len();
                if let Some(gx) = buf!(*x) {
                    gx.iter_mut().zip(g).for_each(|(o, v)| *o += v);
                }
                if let Some(gb) = buf!(*bias) {
                    for row in g.chunks(n) {
                        gb.iter_mut().zip(row).for_each(|(o, v)| *o += v);
                    }
                }
            }
            Op::MulConst(x, factors) => {
                if let Some(gx) = buf!(*x) {
                    for ((o, v), f) in gx.iter_mut().zip(g).zip(factors) {
                        *o += v * f;
                    }
                }
            }
            Op::Gather { table, ids } => {
                let n = self.value(*table).cols();
                if let Some(gt) = buf!(*table) {
                    for (r, &id) in ids.iter().enumerate() {
                        let dst = &mut gt[id * n..(id + 1) * n];
                        dst.iter_mut().zip(&g[r * n..(r + 1) * n]).for_each(|(o, v)| *o += v);
                    }
                }
            }
            Op::ConcatCols(a, b) => {
                let (ca, cb) = (self.value(*a).cols(), self.value(*b).cols());
                let rows = g.len() / (ca + cb);
                if let Some(ga) = buf!(*a) {
                    for r in 0..rows {
                        let src = &g[r * (ca + cb)..r * (ca + cb) + ca];
                        ga[r * ca..(r + 1) * ca].iter_mut().zip(src).for_each(|(o, v)| *o += v);
                    }
                }
                if let Some(gb) = buf!(*b) {
                    for r in 0..rows {
                        let src = &g[r * (ca + cb) + ca..(r + 1) * (ca + cb)];
                        gb[r * cb..(r + 1) * cb].iter_mut().zip(src).for_each(|(o, v)| *o += v);
                    }
                }
            }
            Op::ConcatRows(parts) | Op::Stack(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = self.nodes[p.0].value.len();
                    if let Some(gp) = buf!(p) {
                        gp.iter_mut().zip(&g[offset..offset + len]).for_each(|(o, v)| *o += v);
                    }
                    offset += len;
                }
            }
            Op::AttnScores { query, keys } => {
                let (tq, tk) = (self.value(*query), self.value(*keys));
                let ks = tk.shape();
                let (s_len, b_len, n) = (ks[0], ks[1], ks[2]);
                if let Some(gq) = buf!(*query) {
                    for b in 0..b_len {
                        for s in 0..s_len {
                            let w = g[b * s_len + s];
                            let k = &tk.data()[(s * b_len + b) * n..(s * b_len + b + 1) * n];
                            gq[b * n..(b + 1) * n].iter_mut().zip(k).for_each(|(o, x)| *o += w * x);
                        }
                    }
                }
                if let Some(gk) = buf!(*keys) {
                    for b in 0..b_len {
                        let q = tq.row(b);
                        for s in 0..s_len {
                            let w = g[b * s_len + s];
                            gk[(s * b_len + b) * n..(s * b_len + b + 1) * n]
                                .iter_mut()
                                .zip(q)
                                .for_each(|(o, x)| *o += w * x);
                        }
                    }
                }
            }
            Op::MaskedSoftmax { scores } => {
                let cols = node.value.cols();
                if let Some(gs) = buf!(*scores) {
                    for ((grow, yrow), orow) in g.chunks(cols).zip(y.chunks(cols)).zip(gs.chunks_mut(cols)) {
                        let dot: f64 = grow.iter().zip(yrow).map(|(a, b)| a * b).sum();
                        for ((o, gv), yv) in orow.iter_mut().zip(grow).zip(yrow) {
                            *o += yv * (gv - dot);
                        }
                    }
                }
            }
            Op::WeightedSum { weights, values } => {
                let (tw, tv) = (self.value(*weights), self.value(*values));
                let vs = tv.shape();
                let (s_len, b_len, n) = (vs[0], vs[1], vs[2]);
                if let Some(gw) = buf!(*weights) {
                    for b in 0..b_len {
                        let gb = &g[b * n..(b + 1) * n];
                        for s in 0..s_len {
                            let v = &tv.data()[(s * b_len + b) * n..(s * b_len + b + 1) * n];
                            gw[b * s_len + s] += gb.iter().zip(v).map(|(x, y)| x * y).sum::<f64>();
                        }
                    }
                }
                if let Some(gv) = buf!(*values) {
                    for b in 0..b_len {
                        let gb = &g[b * n..(b + 1) * n];
                        for s in 0..s_len {
                            let w = tw.data()[b * s_len + s];
                            gv[(s * b_len + b) * n..(s * b_len + b + 1) * n]
                                .iter_mut()
                                .zip(gb)
                                .for_each(|(o, x)| *o += w * x);
                        }
                    }
                }
            }
            Op::SoftmaxXent {
                logits,
                targets,
                mask,
                probs,
            } => {
                let v = self.value(*logits).cols();
                let scale = g[0];
                if let Some(gl) = buf!(*logits) {
                    for (r, (&t, &m)) in targets.iter().zip(mask).enumerate() {
                        if !m {
                            continue;
                        }
                        let row = &mut gl[r * v..(r + 1) * v];
                        for (o, p) in row.iter_mut().zip(&probs[r * v..(r + 1) * v]) {
                            *o += scale * p;
                        }
                        row[t] -= scale;
                    }
                }
            }
            Op::Sum(a) => {
                let s = g[0];
                if let Some(ga) = buf!(*a) {
                    ga.iter_mut().for_each(|o| *o += s);
                }
            }
        }
    }
}

/// Leaf gradients produced by one [`Graph::backward`] call.
#[derive(Debug, Default)]
pub struct Gradients {
    index: HashMap<Var, usize>,
    entries: Vec<(Var, Option<ParamId>, Tensor)>,
}

impl Gradients {
    fn insert(&mut self, var: Var, param: Option<ParamId>, grad: Tensor) {
        self.index.insert(var, self.entries.len());
        self.entries.push((var, param, grad));
    }

    /// Gradient of the loss with respect to a leaf, if it was reachable.
    pub fn wrt(&self, var: Var) -> Option<&Tensor> {
        self.index.get(&var).map(|&i| &self.entries[i].2)
    }

    pub fn params(&self) -> impl Iterator<Item = (ParamId, &Tensor)> {
        self.entries.iter().filter_map(|(_, p, g)| p.map(|id| (id, g)))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}
