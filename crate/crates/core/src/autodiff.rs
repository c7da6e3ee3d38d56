//! Reverse-mode differentiation over a linear tape of tensor operations.
//!
//! Every operation is evaluated eagerly when it is recorded. Nodes are
//! appended in creation order, so reverse creation order is a valid
//! reverse-topological order for [`Tape::backward`].

use rand::Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{log_softmax_row, softmax_row, Tensor};

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op<T: Scalar> {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddBias(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Tanh(Var),
    Sigmoid(Var),
    Concat(Vec<Var>),
    SliceCols { input: Var, start: usize },
    Embedding { table: Var, ids: Vec<usize> },
    GatherRows { input: Var, rows: Vec<usize> },
    Softmax(Var),
    CrossEntropy { dist: Var, target: usize },
    SoftmaxCrossEntropy { logits: Var, targets: Vec<Option<usize>>, probs: Vec<T> },
    WeightedRows { weights: Var, rows: Var },
    Sum(Var),
    Reshape(Var),
}

#[derive(Clone, Debug)]
struct Node<T: Scalar> {
    op: Op<T>,
    value: Tensor<T>,
    needs_grad: bool,
}

/// Recording of a computation.
#[derive(Clone, Debug, Default)]
pub struct Tape<T: Scalar> {
    nodes: Vec<Node<T>>,
}

/// Gradients of a scalar loss with respect to every node of a tape.
#[derive(Clone, Debug)]
pub struct Gradients<T: Scalar> {
    grads: Vec<Option<Vec<T>>>,
    shapes: Vec<Vec<usize>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient for `var`; all zeros when `var` did not influence the loss.
    pub fn get(&self, var: Var) -> Tensor<T> {
        let shape = self.shapes[var.0].clone();
        match &self.grads[var.0] {
            Some(g) => Tensor::from_parts(shape, g.clone()),
            None => Tensor::zeros(&shape),
        }
    }

    /// Consume the gradient for `var`, avoiding a copy.
    pub fn take(&mut self, var: Var) -> Tensor<T> {
        let shape = self.shapes[var.0].clone();
        match self.grads[var.0].take() {
            Some(g) => Tensor::from_parts(shape, g),
            None => Tensor::zeros(&shape),
        }
    }
}

fn dim_err<T: Scalar>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>) -> Error {
    Error::Dimension { op, left: a.shape().to_vec(), right: b.shape().to_vec() }
}

fn accumulate<T: Scalar>(slot: &mut Option<Vec<T>>, len: usize, f: impl FnOnce(&mut [T])) {
    let buf = slot.get_or_insert_with(|| vec![T::zero(); len]);
    f(buf);
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op<T>, value: Tensor<T>, inputs: &[Var]) -> Var {
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node { op, value, needs_grad });
        Var(self.nodes.len() - 1)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node { op: Op::Leaf, value, needs_grad: true });
        Var(self.nodes.len() - 1)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node { op: Op::Leaf, value, needs_grad: false });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = crate::tensor::matmul(self.value(a), self.value(b))?;
        Ok(self.push(Op::MatMul(a, b), out, &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(dim_err("add", x, y));
        }
        let vals = x.values().iter().zip(y.values()).map(|(&p, &q)| p + q).collect();
        let out = Tensor::from_parts(x.shape().to_vec(), vals);
        Ok(self.push(Op::Add(a, b), out, &[a, b]))
    }

    /// Adds a bias vector of length `cols` to every row of `a`.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (x, b) = (self.value(a), self.value(bias));
        if b.len() != x.cols() {
            return Err(dim_err("add_bias", x, b));
        }
        let cols = x.cols();
        let mut vals = x.values().to_vec();
        for row in vals.chunks_mut(cols) {
            for (v, &bb) in row.iter_mut().zip(b.values()) {
                *v += bb;
            }
        }
        let out = Tensor::from_parts(x.shape().to_vec(), vals);
        Ok(self.push(Op::AddBias(a, bias), out, &[a, bias]))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(dim_err("mul", x, y));
        }
        let vals = x.values().iter().zip(y.values()).map(|(&p, &q)| p * q).collect();
        let out = Tensor::from_parts(x.shape().to_vec(), vals);
        Ok(self.push(Op::Mul(a, b), out, &[a, b]))
    }

    pub fn scale(&mut self, a: Var, c: T) -> Var {
        let out = self.value(a).map(|v| v * c);
        self.push(Op::Scale(a, c), out, &[a])
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|v| v.tanh());
        self.push(Op::Tanh(a), out, &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|v| T::one() / (T::one() + (-v).exp()));
        self.push(Op::Sigmoid(a), out, &[a])
    }

    /// Concatenation along the last axis; all parts need the same row count.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or_else(|| Error::Domain("concat of nothing".into()))?;
        let rows = self.value(*first).rows();
        let lead = self.value(*first).shape().to_vec();
        for p in parts {
            let t = self.value(*p);
            if t.rows() != rows || t.shape().len() != lead.len() {
                return Err(dim_err("concat", self.value(*first), t));
            }
        }
        let total: usize = parts.iter().map(|p| self.value(*p).cols()).sum();
        let mut vals = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for p in parts {
                let t = self.value(*p);
                let c = t.cols();
                vals.extend_from_slice(&t.values()[r * c..(r + 1) * c]);
            }
        }
        let mut shape = lead;
        *shape.last_mut().unwrap() = total;
        let out = Tensor::from_parts(shape, vals);
        Ok(self.push(Op::Concat(parts.to_vec()), out, parts))
    }

    /// Columns `start..end` of a matrix.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let x = self.value(a);
        let cols = x.cols();
        if start >= end || end > cols {
            return Err(Error::Index { what: "column slice", index: end, len: cols });
        }
        let rows = x.rows();
        let mut vals = Vec::with_capacity(rows * (end - start));
        for row in x.values().chunks(cols) {
            vals.extend_from_slice(&row[start..end]);
        }
        let mut shape = x.shape().to_vec();
        *shape.last_mut().unwrap() = end - start;
        let out = Tensor::from_parts(shape, vals);
        Ok(self.push(Op::SliceCols { input: a, start }, out, &[a]))
    }

    /// Rows of `table` selected by `ids`, as a `ids.len() × cols` matrix.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let t = self.value(table);
        let (n, cols) = (t.rows(), t.cols());
        let mut vals = Vec::with_capacity(ids.len() * cols);
        for &id in ids {
            if id >= n {
                return Err(Error::Index { what: "embedding table", index: id, len: n });
            }
            vals.extend_from_slice(&t.values()[id * cols..(id + 1) * cols]);
        }
        let out = Tensor::new(vec![ids.len(), cols], vals)?;
        Ok(self.push(Op::Embedding { table, ids: ids.to_vec() }, out, &[table]))
    }

    /// Row gather; identical in value to [`Tape::embedding`] but meant for activations.
    pub fn gather_rows(&mut self, a: Var, rows: &[usize]) -> Result<Var> {
        let t = self.value(a);
        let (n, cols) = (t.rows(), t.cols());
        let mut vals = Vec::with_capacity(rows.len() * cols);
        for &r in rows {
            if r >= n {
                return Err(Error::Index { what: "row gather", index: r, len: n });
            }
            vals.extend_from_slice(&t.values()[r * cols..(r + 1) * cols]);
        }
        let out = Tensor::new(vec![rows.len(), cols], vals)?;
        Ok(self.push(Op::GatherRows { input: a, rows: rows.to_vec() }, out, &[a]))
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let out = crate::tensor::softmax(self.value(a))?;
        Ok(self.push(Op::Softmax(a), out, &[a]))
    }

    /// `-ln(dist[target])` for a probability vector.
    pub fn cross_entropy(&mut self, dist: Var, target: usize) -> Result<Var> {
        let d = self.value(dist);
        if target >= d.len() {
            return Err(Error::Index { what: "distribution", index: target, len: d.len() });
        }
        let out = Tensor::scalar(-d.values()[target].ln());
        Ok(self.push(Op::CrossEntropy { dist, target }, out, &[dist]))
    }

    /// Summed `-log softmax(logits_r)[target_r]` over rows; `None` rows are ignored.
    pub fn softmax_cross_entropy(&mut self, logits: Var, targets: &[Option<usize>]) -> Result<Var> {
        let x = self.value(logits);
        let (rows, cols) = (x.rows(), x.cols());
        if targets.len() != rows {
            return Err(Error::Dimension { op: "softmax_cross_entropy", left: x.shape().to_vec(), right: vec![targets.len()] });
        }
        let mut probs = vec![T::zero(); x.len()];
        let mut logp = vec![T::zero(); cols];
        let mut loss = T::zero();
        for (r, t) in targets.iter().enumerate() {
            let row = &x.values()[r * cols..(r + 1) * cols];
            softmax_row(row, &mut probs[r * cols..(r + 1) * cols]);
            if let Some(t) = *t {
                if t >= cols {
                    return Err(Error::Index { what: "target vocabulary", index: t, len: cols });
                }
                log_softmax_row(row, &mut logp);
                loss -= logp[t];
            }
        }
        let op = Op::SoftmaxCrossEntropy { logits, targets: targets.to_vec(), probs };
        Ok(self.push(op, Tensor::scalar(loss), &[logits]))
    }

    /// `out[b] = Σ_j weights[b, j] · rows[b·T + j]` with `weights: B×T`, `rows: (B·T)×D`.
    pub fn weighted_rows(&mut self, weights: Var, rows: Var) -> Result<Var> {
        let (w, h) = (self.value(weights), self.value(rows));
        let (b, t) = (w.rows(), w.cols());
        if h.rows() != b * t {
            return Err(dim_err("weighted_rows", w, h));
        }
        let d = h.cols();
        let mut vals = vec![T::zero(); b * d];
        for bi in 0..b {
            let out = &mut vals[bi * d..(bi + 1) * d];
            for j in 0..t {
                let a = w.values()[bi * t + j];
                let src = &h.values()[(bi * t + j) * d..(bi * t + j + 1) * d];
                for (o, &s) in out.iter_mut().zip(src) {
                    *o += a * s;
                }
            }
        }
        let out = Tensor::from_parts(vec![b, d], vals);
        Ok(self.push(Op::WeightedRows { weights, rows }, out, &[weights, rows]))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).sum());
        self.push(Op::Sum(a), out, &[a])
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(a).clone().reshape(shape.to_vec())?;
        Ok(self.push(Op::Reshape(a), out, &[a]))
    }

    /// Inverted dropout: zero with probability `p`, scale survivors by `1/(1-p)`.
    pub fn dropout<R: Rng>(&mut self, a: Var, p: f64, rng: &mut R) -> Result<Var> {
        if p <= 0.0 {
            return Ok(a);
        }
        let keep = T::from_f64_lossy(1.0 / (1.0 - p));
        let x = self.value(a);
        let mask: Vec<T> = (0..x.len()).map(|_| if rng.gen::<f64>() < p { T::zero() } else { keep }).collect();
        let mask = self.constant(Tensor::from_parts(x.shape().to_vec(), mask));
        self.mul(a, mask)
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::Contract(format!("backward needs a scalar loss, got shape {:?}", lv.shape())));
        }
        let n = loss.0 + 1;
        let mut grads: Vec<Option<Vec<T>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![T::one()]);
        for i in (0..n).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(&node.op, &node.value, &g, &mut grads);
            grads[i] = Some(g);
        }
        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Gradients { grads, shapes })
    }

    fn propagate(&self, op: &Op<T>, out: &Tensor<T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let one = T::one();
        match op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (x, y) = (self.value(*a), self.value(*b));
                let (m, k, n) = (x.shape()[0], x.shape()[1], y.shape()[1]);
                if self.nodes[a.0].needs_grad {
                    accumulate(&mut grads[a.0], m * k, |ga| T::gemm(m, n, k, one, g, false, y.values(), true, one, ga));
                }
                if self.nodes[b.0].needs_grad {
                    accumulate(&mut grads[b.0], k * n, |gb| T::gemm(k, m, n, one, x.values(), true, g, false, one, gb));
                }
            }
            Op::Add(a, b) => {
                for v in [a, b] {
                    if self.nodes[v.0].needs_grad {
                        accumulate(&mut grads[v.0], g.len(), |buf| buf.iter_mut().zip(g).for_each(|(d, &s)| *d += s));
                    }
                }
            }
            Op::AddBias(a, bias) => {
                if self.nodes[a.0].needs_grad {
                    accumulate(&mut grads[a.0], g.len(), |buf| buf.iter_mut().zip(g).for_each(|(d, &s)| *d += s));
                }
                if self.nodes[bias.0].needs_grad {
                    let cols = self.value(*bias).len();
                    accumulate(&mut grads[bias.0], cols, |buf| {
                        for row in g.chunks(cols) {
                            buf.iter_mut().zip(row).for_each(|(d, &s)| *d += s);
                        }
                    });
                }
            }
            Op::Mul(a, b) => {
                let (x, y) = (self.value(*a), self.value(*b));
                if self.nodes[a.0].needs_grad {
                    accumulate(&mut grads[a.0], g.len(), |buf| {
                        for ((d, &s), &o) in buf.iter_mut().zip(g).zip(y.values()) {
                            *d += s * o;
                        }
                    });
                }
                if self.nodes[b.0].needs_grad {
                    accumulate(&mut grads[b.0], g.len(), |buf| {
                        for ((d, &s), &o) in buf.iter_mut().zip(g).zip(x.values()) {
                            *d += s * o;
                        }
                    });
                }
            }
            Op::Scale(a, c) => {
                accumulate(&mut grads[a.0], g.len(), |buf| buf.iter_mut().zip(g).for_each(|(d, &s)| *d += s * *c));
            }
            Op::Tanh(a) => {
                accumulate(&mut grads[a.0], g.len(), |buf| {
                    for ((d, &s), &y) in buf.iter_mut().zip(g).zip(out.values()) {
                        *d += s * (one - y * y);
                    }
                });
            }
            Op::Sigmoid(a) => {
                accumulate(&mut grads[a.0], g.len(), |buf| {
                    for ((d, &s), &y) in buf.iter_mut().zip(g).zip(out.values()) {
                        *d += s * y * (one - y);
                    }
                });
            }
            Op::Concat(parts) => {
                let total = out.cols();
                let mut offset = 0;
                for p in parts {
                    let c = self.value(*p).cols();
                    if self.nodes[p.0].needs_grad {
                        let len = self.value(*p).len();
                        accumulate(&mut grads[p.0], len, |buf| {
                            for (dst, src) in buf.chunks_mut(c).zip(g.chunks(total)) {
                                dst.iter_mut().zip(&src[offset..offset + c]).for_each(|(d, &s)| *d += s);
                            }
                        });
                    }
                    offset += c;
                }
            }
            Op::SliceCols { input, start } => {
                let x = self.value(*input);
                let (cols, w) = (x.cols(), out.cols());
                accumulate(&mut grads[input.0], x.len(), |buf| {
                    for (dst, src) in buf.chunks_mut(cols).zip(g.chunks(w)) {
                        dst[*start..*start + w].iter_mut().zip(src).for_each(|(d, &s)| *d += s);
                    }
                });
            }
            Op::Embedding { table: src, ids: rows } | Op::GatherRows { input: src, rows } => {
                let x = self.value(*src);
                let cols = x.cols();
                accumulate(&mut grads[src.0], x.len(), |buf| {
                    for (&r, row) in rows.iter().zip(g.chunks(cols)) {
                        buf[r * cols..(r + 1) * cols].iter_mut().zip(row).for_each(|(d, &s)| *d += s);
                    }
                });
            }
            Op::Softmax(a) => {
                let cols = out.cols();
                accumulate(&mut grads[a.0], g.len(), |buf| {
                    for ((dst, gr), y) in buf.chunks_mut(cols).zip(g.chunks(cols)).zip(out.values().chunks(cols)) {
                        let dot: T = gr.iter().zip(y).map(|(&s, &p)| s * p).sum();
                        for ((d, &s), &p) in dst.iter_mut().zip(gr).zip(y) {
                            *d += p * (s - dot);
                        }
                    }
                });
            }
            Op::CrossEntropy { dist, target } => {
                let d = self.value(*dist);
                let p = d.values()[*target];
                accumulate(&mut grads[dist.0], d.len(), |buf| buf[*target] -= g[0] / p);
            }
            Op::SoftmaxCrossEntropy { logits, targets, probs } => {
                let cols = self.value(*logits).cols();
                accumulate(&mut grads[logits.0], probs.len(), |buf| {
                    for (r, t) in targets.iter().enumerate() {
                        let Some(t) = *t else { continue };
                        let dst = &mut buf[r * cols..(r + 1) * cols];
                        for (d, &p) in dst.iter_mut().zip(&probs[r * cols..(r + 1) * cols]) {
                            *d += g[0] * p;
                        }
                        dst[t] -= g[0];
                    }
                });
            }
            Op::WeightedRows { weights, rows } => {
                let (w, h) = (self.value(*weights), self.value(*rows));
                let (b, t, d) = (w.rows(), w.cols(), h.cols());
                if self.nodes[weights.0].needs_grad {
                    accumulate(&mut grads[weights.0], w.len(), |buf| {
                        for bi in 0..b {
                            let gr = &g[bi * d..(bi + 1) * d];
                            for j in 0..t {
                                let src = &h.values()[(bi * t + j) * d..(bi * t + j + 1) * d];
                                buf[bi * t + j] += gr.iter().zip(src).map(|(&x, &y)| x * y).sum::<T>();
                            }
                        }
                    });
                }
                if self.nodes[rows.0].needs_grad {
                    accumulate(&mut grads[rows.0], h.len(), |buf| {
                        for bi in 0..b {
                            let gr = &g[bi * d..(bi + 1) * d];
                            for j in 0..t {
                                let a = w.values()[bi * t + j];
                                let dst = &mut buf[(bi * t + j) * d..(bi * t + j + 1) * d];
                                dst.iter_mut().zip(gr).for_each(|(x, &s)| *x += a * s);
                            }
                        }
                    });
                }
            }
            Op::Sum(a) => {
                let len = self.value(*a).len();
                accumulate(&mut grads[a.0], len, |buf| buf.iter_mut().for_each(|d| *d += g[0]));
            }
            Op::Reshape(a) => {
                accumulate(&mut grads[a.0], g.len(), |buf| buf.iter_mut().zip(g).for_each(|(d, &s)| *d += s));
            }
        }
    }
}
