//! Dynamic reverse-mode operation record.
//!
//! Every primitive appends a node holding its output value plus whatever the
//! reverse rule needs. [`Graph::backward`] sweeps the nodes in reverse
//! insertion order, which is a valid reverse topological order because a node
//! can only reference nodes created before it. Gradients add up at fan-out.

use std::sync::Arc;

use crate::tensor::{gemm_nt, gemm_tn};
use crate::{NumericsError, Result, Scalar, Tensor};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Deliberate reverse-rule corruption, used as a negative control for
/// gradient checking.
#[doc(hidden)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Fault {
    GeluReverse,
}

#[derive(Debug)]
enum Op<S> {
    Leaf,
    MatMul(Var, Var),
    /// Same-shape add, or `b` is a `1×n` row broadcast over the rows of `a`.
    Add(Var, Var),
    Sub(Var, Var),
    /// Elementwise product with the same broadcast rule as `Add`.
    Mul(Var, Var),
    Scale(Var, S),
    LayerNorm { x: Var, rstd: Vec<S> },
    Gelu(Var),
    Softmax(Var),
    MeanRows(Var),
    MeanCols(Var),
    SelectRows { x: Var, idx: Vec<usize> },
    Transpose(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols { x: Var, start: usize },
    CrossEntropy { logits: Var, labels: Vec<usize>, probs: Vec<S> },
    Mse(Var, Var),
    Sum(Var),
}

struct Node<S> {
    value: Arc<Tensor<S>>,
    op: Op<S>,
    needs_grad: bool,
}

/// Ordered record of primitive operations (the gradient tape).
pub struct Graph<S: Scalar = f32> {
    nodes: Vec<Node<S>>,
    fault: Option<Fault>,
}

impl<S: Scalar> Default for Graph<S> {
    fn default() -> Self {
        Self::new()
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

fn gelu_fwd<S: Scalar>(x: S) -> S {
    let c = S::of(GELU_C);
    let a = S::of(GELU_A);
    let half = S::of(0.5);
    half * x * (S::one() + (c * (x + a * x * x * x)).tanh())
}

fn gelu_grad<S: Scalar>(x: S) -> S {
    let c = S::of(GELU_C);
    let a = S::of(GELU_A);
    let half = S::of(0.5);
    let u = c * (x + a * x * x * x);
    let t = u.tanh();
    let du = c * (S::one() + S::of(3.0) * a * x * x);
    half * (S::one() + t) + half * x * (S::one() - t * t) * du
}

impl<S: Scalar> Graph<S> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            fault: None,
        }
    }

    #[doc(hidden)]
    pub fn inject_fault(&mut self, fault: Fault) {
        self.fault = Some(fault);
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<S> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Tensor<S>, op: Op<S>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value: Arc::new(value),
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Trainable leaf; gradients are reported for it.
    pub fn param(&mut self, value: Arc<Tensor<S>>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// Constant leaf; no gradient flows into it.
    pub fn constant(&mut self, value: Tensor<S>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Constant leaf sharing an existing tensor (e.g. a frozen parameter).
    pub fn constant_shared(&mut self, value: Arc<Tensor<S>>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    fn mismatch(op: &'static str, a: &Tensor<S>, b: &Tensor<S>) -> NumericsError {
        NumericsError::ShapeMismatch {
            op,
            left: a.shape().to_vec(),
            right: b.shape().to_vec(),
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::MatMul(a, b), ng))
    }

    fn broadcast_binary(
        &self,
        op: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(S, S) -> S,
    ) -> Result<Tensor<S>> {
        let (ta, tb) = (self.value(a), self.value(b));
        let cols = ta.cols();
        let same = ta.shape() == tb.shape();
        let row = tb.rows() == 1 && tb.cols() == cols;
        if !same && !row {
            return Err(Self::mismatch(op, ta, tb));
        }
        let data = ta
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let y = if same { tb.data()[i] } else { tb.data()[i % cols] };
                f(x, y)
            })
            .collect();
        Tensor::new(ta.shape().to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.broadcast_binary("add", a, b, |x, y| x + y)?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::Add(a, b), ng))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Self::mismatch("sub", self.value(a), self.value(b)));
        }
        let out = self.broadcast_binary("sub", a, b, |x, y| x - y)?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::Sub(a, b), ng))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.broadcast_binary("mul", a, b, |x, y| x * y)?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::Mul(a, b), ng))
    }

    pub fn scale(&mut self, a: Var, s: S) -> Var {
        let ta = self.value(a);
        let out = Tensor::new(
            ta.shape().to_vec(),
            ta.data().iter().map(|&x| x * s).collect(),
        )
        .expect("same shape");
        let ng = self.needs(a);
        self.push(out, Op::Scale(a, s), ng)
    }

    /// Row-wise normalization to zero mean and unit variance (no affine).
    pub fn layer_norm(&mut self, x: Var, eps: S) -> Var {
        let tx = self.value(x);
        let (r, c) = (tx.rows(), tx.cols());
        let n = S::of(c as f64);
        let mut out = vec![S::zero(); r * c];
        let mut rstd = Vec::with_capacity(r);
        for i in 0..r {
            let row = tx.row(i);
            let mean = row.iter().copied().sum::<S>() / n;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<S>() / n;
            let rs = S::one() / (var + eps).sqrt();
            for j in 0..c {
                out[i * c + j] = (row[j] - mean) * rs;
            }
            rstd.push(rs);
        }
        let out = Tensor::new(tx.shape().to_vec(), out).expect("same shape");
        let ng = self.needs(x);
        self.push(out, Op::LayerNorm { x, rstd }, ng)
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, x: Var) -> Var {
        let tx = self.value(x);
        let out = Tensor::new(tx.shape().to_vec(), tx.data().iter().map(|&v| gelu_fwd(v)).collect())
            .expect("same shape");
        let ng = self.needs(x);
        self.push(out, Op::Gelu(x), ng)
    }

    /// Row-wise softmax.
    pub fn softmax(&mut self, x: Var) -> Var {
        let tx = self.value(x);
        let (r, c) = (tx.rows(), tx.cols());
        let mut out = vec![S::zero(); r * c];
        for i in 0..r {
            softmax_row(tx.row(i), &mut out[i * c..(i + 1) * c]);
        }
        let out = Tensor::new(tx.shape().to_vec(), out).expect("same shape");
        let ng = self.needs(x);
        self.push(out, Op::Softmax(x), ng)
    }

    /// Mean over `axis` of a matrix: axis 0 gives `1×cols`, axis 1 gives `rows×1`.
    pub fn mean_over_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let tx = self.value(x);
        let (r, c) = (tx.rows(), tx.cols());
        let ng = self.needs(x);
        match axis {
            0 => {
                let mut out = vec![S::zero(); c];
                for i in 0..r {
                    for (o, &v) in out.iter_mut().zip(tx.row(i)) {
                        *o += v;
                    }
                }
                let inv = S::one() / S::of(r as f64);
                out.iter_mut().for_each(|v| *v *= inv);
                Ok(self.push(Tensor::row_vector(out), Op::MeanRows(x), ng))
            }
            1 => {
                let inv = S::one() / S::of(c as f64);
                let out = (0..r)
                    .map(|i| tx.row(i).iter().copied().sum::<S>() * inv)
                    .collect();
                let t = Tensor::matrix(r, 1, out)?;
                Ok(self.push(t, Op::MeanCols(x), ng))
            }
            _ => Err(NumericsError::Invalid(format!("axis {axis} not supported"))),
        }
    }

    /// Gathers rows of `x` by index (embedding lookup).
    pub fn embedding_slice(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let tx = self.value(x);
        let c = tx.cols();
        let mut out = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            if i >= tx.rows() {
                return Err(NumericsError::IndexOutOfBounds {
                    index: i,
                    len: tx.rows(),
                });
            }
            out.extend_from_slice(tx.row(i));
        }
        let t = Tensor::matrix(idx.len(), c, out)?;
        let ng = self.needs(x);
        Ok(self.push(
            t,
            Op::SelectRows {
                x,
                idx: idx.to_vec(),
            },
            ng,
        ))
    }

    pub fn transpose(&mut self, x: Var) -> Var {
        let t = self.value(x).transpose();
        let ng = self.needs(x);
        self.push(t, Op::Transpose(x), ng)
    }

    /// Concatenation along `axis` (0 = stack rows, 1 = join columns).
    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        if xs.is_empty() {
            return Err(NumericsError::Invalid("concat of nothing".into()));
        }
        let ng = xs.iter().any(|&v| self.needs(v));
        match axis {
            0 => {
                let c = self.value(xs[0]).cols();
                let mut data = Vec::new();
                let mut rows = 0;
                for &v in xs {
                    let t = self.value(v);
                    if t.cols() != c {
                        return Err(Self::mismatch("concat", self.value(xs[0]), t));
                    }
                    rows += t.rows();
                    data.extend_from_slice(t.data());
                }
                let t = Tensor::matrix(rows, c, data)?;
                Ok(self.push(t, Op::ConcatRows(xs.to_vec()), ng))
            }
            1 => {
                let r = self.value(xs[0]).rows();
                let mut total = 0;
                for &v in xs {
                    let t = self.value(v);
                    if t.rows() != r {
                        return Err(Self::mismatch("concat", self.value(xs[0]), t));
                    }
                    total += t.cols();
                }
                let mut data = Vec::with_capacity(r * total);
                for i in 0..r {
                    for &v in xs {
                        data.extend_from_slice(self.value(v).row(i));
                    }
                }
                let t = Tensor::matrix(r, total, data)?;
                Ok(self.push(t, Op::ConcatCols(xs.to_vec()), ng))
            }
            _ => Err(NumericsError::Invalid(format!("axis {axis} not supported"))),
        }
    }

    /// Columns `[start, start + len)`.
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let tx = self.value(x);
        if start + len > tx.cols() {
            return Err(NumericsError::IndexOutOfBounds {
                index: start + len,
                len: tx.cols(),
            });
        }
        let r = tx.rows();
        let mut data = Vec::with_capacity(r * len);
        for i in 0..r {
            data.extend_from_slice(&tx.row(i)[start..start + len]);
        }
        let t = Tensor::matrix(r, len, data)?;
        let ng = self.needs(x);
        Ok(self.push(t, Op::SliceCols { x, start }, ng))
    }

    /// Mean cross-entropy of row-wise logits against class labels, with
    /// log-sum-exp stabilization.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let tl = self.value(logits);
        let (r, c) = (tl.rows(), tl.cols());
        if labels.len() != r {
            return Err(NumericsError::ShapeMismatch {
                op: "cross_entropy",
                left: tl.shape().to_vec(),
                right: vec![labels.len()],
            });
        }
        let mut probs = vec![S::zero(); r * c];
        let mut loss = S::zero();
        for i in 0..r {
            let y = labels[i];
            if y >= c {
                return Err(NumericsError::LabelOutOfRange {
                    label: y,
                    classes: c,
                });
            }
            let row = tl.row(i);
            let lse = log_sum_exp(row);
            loss += lse - row[y];
            softmax_row(row, &mut probs[i * c..(i + 1) * c]);
        }
        loss = loss / S::of(r as f64);
        let ng = self.needs(logits);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            ng,
        ))
    }

    /// Mean squared difference of two same-shape tensors.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Self::mismatch("mse", ta, tb));
        }
        let n = S::of(ta.len() as f64);
        let s = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(&x, &y)| (x - y) * (x - y))
            .sum::<S>()
            / n;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::scalar(s), Op::Mse(a, b), ng))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().copied().sum::<S>();
        let ng = self.needs(x);
        self.push(Tensor::scalar(s), Op::Sum(x), ng)
    }

    /// Reverse sweep from a scalar output.
    pub fn backward(&self, output: Var) -> Result<Gradients<S>> {
        let out_shape = self.shape(output);
        if self.value(output).len() != 1 {
            return Err(NumericsError::NonScalarOutput(out_shape.to_vec()));
        }
        let mut grads: Vec<Option<Vec<S>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(vec![S::one()]);

        for id in (0..=output.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            if !node.needs_grad {
                continue;
            }
            self.reverse_rule(id, &g, &mut grads);
            grads[id] = Some(g);
        }

        let grads = grads
            .into_iter()
            .enumerate()
            .map(|(i, g)| {
                g.filter(|_| matches!(self.nodes[i].op, Op::Leaf) && self.nodes[i].needs_grad)
                    .map(|g| {
                        Tensor::new(self.nodes[i].value.shape().to_vec(), g).expect("grad shape")
                    })
            })
            .collect();
        Ok(Gradients { grads })
    }

    fn reverse_rule(&self, id: usize, g: &[S], grads: &mut [Option<Vec<S>>]) {
        let node = &self.nodes[id];
        let out = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
                if self.needs(*a) {
                    let ga = self.slot(grads, *a);
                    gemm_nt(g, tb.data(), ga, m, n, k);
                }
                if self.needs(*b) {
                    let gb = self.slot(grads, *b);
                    gemm_tn(ta.data(), g, gb, m, k, n);
                }
            }
            Op::Add(a, b) | Op::Sub(a, b) => {
                let neg = matches!(node.op, Op::Sub(..));
                if self.needs(*a) {
                    let ga = self.slot(grads, *a);
                    ga.iter_mut().zip(g).for_each(|(x, &y)| *x += y);
                }
                if self.needs(*b) {
                    let cols = out.cols();
                    let gb = self.slot(grads, *b);
                    let bcast = gb.len() != g.len();
                    for (i, &y) in g.iter().enumerate() {
                        let j = if bcast { i % cols } else { i };
                        if neg {
                            gb[j] -= y;
                        } else {
                            gb[j] += y;
                        }
                    }
                }
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let cols = out.cols();
                let bcast = tb.len() != ta.len();
                if self.needs(*a) {
                    let ga = self.slot(grads, *a);
                    for (i, &y) in g.iter().enumerate() {
                        let j = if bcast { i % cols } else { i };
                        ga[i] += y * tb.data()[j];
                    }
                }
                if self.needs(*b) {
                    let gb = self.slot(grads, *b);
                    for (i, &y) in g.iter().enumerate() {
                        let j = if bcast { i % cols } else { i };
                        gb[j] += y * ta.data()[i];
                    }
                }
            }
            Op::Scale(a, s) => {
                let ga = self.slot(grads, *a);
                ga.iter_mut().zip(g).for_each(|(x, &y)| *x += y * *s);
            }
            Op::LayerNorm { x, rstd } => {
                let (r, c) = (out.rows(), out.cols());
                let n = S::of(c as f64);
                let gx = self.slot(grads, *x);
                for i in 0..r {
                    let y = out.row(i);
                    let gy = &g[i * c..(i + 1) * c];
                    let mean_g = gy.iter().copied().sum::<S>() / n;
                    let mean_gy = gy.iter().zip(y).map(|(&a, &b)| a * b).sum::<S>() / n;
                    for j in 0..c {
                        gx[i * c + j] += rstd[i] * (gy[j] - mean_g - y[j] * mean_gy);
                    }
                }
            }
            Op::Gelu(x) => {
                let tx = self.value(*x);
                let faulty = self.fault == Some(Fault::GeluReverse);
                let gx = self.slot(grads, *x);
                for (i, &y) in g.iter().enumerate() {
                    let v = tx.data()[i];
                    let d = if faulty {
                        // Drops the tanh-derivative term.
                        S::of(0.5) * (S::one() + (S::of(GELU_C) * (v + S::of(GELU_A) * v * v * v)).tanh())
                    } else {
                        gelu_grad(v)
                    };
                    gx[i] += y * d;
                }
            }
            Op::Softmax(x) => {
                let (r, c) = (out.rows(), out.cols());
                let gx = self.slot(grads, *x);
                for i in 0..r {
                    let y = out.row(i);
                    let gy = &g[i * c..(i + 1) * c];
                    let dot = gy.iter().zip(y).map(|(&a, &b)| a * b).sum::<S>();
                    for j in 0..c {
                        gx[i * c + j] += y[j] * (gy[j] - dot);
                    }
                }
            }
            Op::MeanRows(x) => {
                let tx = self.value(*x);
                let (r, c) = (tx.rows(), tx.cols());
                let inv = S::one() / S::of(r as f64);
                let gx = self.slot(grads, *x);
                for i in 0..r {
                    for j in 0..c {
                        gx[i * c + j] += g[j] * inv;
                    }
                }
            }
            Op::MeanCols(x) => {
                let tx = self.value(*x);
                let (r, c) = (tx.rows(), tx.cols());
                let inv = S::one() / S::of(c as f64);
                let gx = self.slot(grads, *x);
                for i in 0..r {
                    for j in 0..c {
                        gx[i * c + j] += g[i] * inv;
                    }
                }
            }
            Op::SelectRows { x, idx } => {
                let c = out.cols();
                let gx = self.slot(grads, *x);
                for (k, &i) in idx.iter().enumerate() {
                    for j in 0..c {
                        gx[i * c + j] += g[k * c + j];
                    }
                }
            }
            Op::Transpose(x) => {
                let (r, c) = (out.rows(), out.cols());
                let gx = self.slot(grads, *x);
                // out is r×c, x is c×r
                for i in 0..r {
                    for j in 0..c {
                        gx[j * r + i] += g[i * c + j];
                    }
                }
            }
            Op::ConcatRows(xs) => {
                let mut offset = 0;
                for &v in xs {
                    let n = self.value(v).len();
                    if self.needs(v) {
                        let gv = self.slot(grads, v);
                        gv.iter_mut()
                            .zip(&g[offset..offset + n])
                            .for_each(|(a, &b)| *a += b);
                    }
                    offset += n;
                }
            }
            Op::ConcatCols(xs) => {
                let (r, total) = (out.rows(), out.cols());
                let mut col = 0;
                for &v in xs {
                    let c = self.value(v).cols();
                    if self.needs(v) {
                        let gv = self.slot(grads, v);
                        for i in 0..r {
                            for j in 0..c {
                                gv[i * c + j] += g[i * total + col + j];
                            }
                        }
                    }
                    col += c;
                }
            }
            Op::SliceCols { x, start } => {
                let (r, len) = (out.rows(), out.cols());
                let c = self.value(*x).cols();
                let gx = self.slot(grads, *x);
                for i in 0..r {
                    for j in 0..len {
                        gx[i * c + start + j] += g[i * len + j];
                    }
                }
            }
            Op::CrossEntropy {
                logits,
                labels,
                probs,
            } => {
                let tl = self.value(*logits);
                let (r, c) = (tl.rows(), tl.cols());
                let scale = g[0] / S::of(r as f64);
                let gl = self.slot(grads, *logits);
                for i in 0..r {
                    for j in 0..c {
                        let onehot = if labels[i] == j { S::one() } else { S::zero() };
                        gl[i * c + j] += scale * (probs[i * c + j] - onehot);
                    }
                }
            }
            Op::Mse(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let k = S::of(2.0) * g[0] / S::of(ta.len() as f64);
                if self.needs(*a) {
                    let ga = self.slot(grads, *a);
                    for i in 0..ga.len() {
                        ga[i] += k * (ta.data()[i] - tb.data()[i]);
                    }
                }
                if self.needs(*b) {
                    let gb = self.slot(grads, *b);
                    for i in 0..gb.len() {
                        gb[i] -= k * (ta.data()[i] - tb.data()[i]);
                    }
                }
            }
            Op::Sum(x) => {
                let gx = self.slot(grads, *x);
                gx.iter_mut().for_each(|v| *v += g[0]);
            }
        }
    }

    fn slot<'a>(&self, grads: &'a mut [Option<Vec<S>>], v: Var) -> &'a mut Vec<S> {
        let n = self.nodes[v.0].value.len();
        grads[v.0].get_or_insert_with(|| vec![S::zero(); n])
    }
}

fn log_sum_exp<S: Scalar>(row: &[S]) -> S {
    let m = row.iter().copied().fold(S::neg_infinity(), S::max);
    m + row.iter().map(|&v| (v - m).exp()).sum::<S>().ln()
}

fn softmax_row<S: Scalar>(row: &[S], out: &mut [S]) {
    let m = row.iter().copied().fold(S::neg_infinity(), S::max);
    let mut z = S::zero();
    for (o, &v) in out.iter_mut().zip(row) {
        *o = (v - m).exp();
        z += *o;
    }
    out.iter_mut().for_each(|o| *o = *o / z);
}

/// Leaf gradients produced by [`Graph::backward`].
#[derive(Debug)]
pub struct Gradients<S: Scalar = f32> {
    grads: Vec<Option<Tensor<S>>>,
}

impl<S: Scalar> Gradients<S> {
    pub fn get(&self, v: Var) -> Option<&Tensor<S>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient of `v`, or zeros shaped like `like` when nothing flowed to it.
    pub fn get_or_zeros(&self, v: Var, like: &Tensor<S>) -> Tensor<S> {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(like.shape()))
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<S>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}
