//! Define-by-run reverse-mode differentiation.
//!
//! A [`Graph`] records every operation applied to its [`Var`] handles in
//! execution order, so node ids are already a topological order. Nodes keep
//! their forward value; backward reads inputs straight from the arena instead
//! of saving copies.
//!
//! Broadcasting follows a single rule: the right operand of `add`/`sub`/`mul`
//! may have the same shape as the left one, a shape that differs only by a
//! leading extent of 1 (one map replicated across channels), or a single
//! element. Anything else is rejected.

use std::collections::HashMap;

use crate::nn::activation::Activation;
use crate::nn::conv::{self, ConvSpec};
use crate::nn::norm;
use crate::tensor::{Result, Tensor, TensorError};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Broadcast {
    Same,
    /// rhs is `1×rest`, replicated along the leading axis of lhs.
    Leading,
    Scalar,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Binary {
    Add,
    Sub,
    Mul,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Binary(Binary, Var, Var, Broadcast),
    ChannelScale(Var, Var),
    Matmul(Var, Var),
    Transpose(Var),
    Softmax {
        x: Var,
        axis: usize,
    },
    PixelUnshuffle(Var, usize),
    PixelShuffle(Var, usize),
    Reshape(Var),
    Narrow {
        x: Var,
        start: usize,
    },
    Concat(Vec<Var>),
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        spec: ConvSpec,
    },
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
    },
    Activation(Var, Activation),
    Abs(Var),
    L2Normalize {
        x: Var,
        eps: f64,
    },
    Sum(Var),
    Mean(Var),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Gradients of the trainable leaves, produced by [`Graph::backward`].
#[derive(Debug, Default)]
pub struct Gradients {
    grads: HashMap<Var, Tensor>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(&var)
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor> {
        self.grads.remove(&var)
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    backward_done: bool,
}

fn finite(op: &'static str, t: Tensor) -> Result<Tensor> {
    if t.is_finite() {
        Ok(t)
    } else {
        Err(TensorError::NonFinite { op })
    }
}

fn invalid<T>(op: &'static str, msg: impl Into<String>) -> Result<T> {
    Err(TensorError::Invalid {
        op,
        msg: msg.into(),
    })
}

fn mat_dims(op: &'static str, t: &Tensor) -> Result<(usize, usize)> {
    match t.shape()[..] {
        [m, n] => Ok((m, n)),
        _ => invalid(op, format!("expected a matrix, got shape {:?}", t.shape())),
    }
}

/// Splits a shape into (outer, axis, inner) extents around `axis`.
fn around_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..][..n];
        for p in 0..k {
            let aip = a[i * k + p];
            for (o, bv) in row.iter_mut().zip(&b[p * n..][..n]) {
                *o += aip * bv;
            }
        }
    }
    out
}

fn transpose_raw(a: &[f64], m: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = a[i * n + j];
        }
    }
    out
}

/// Space-to-depth. Output channel `c·r² + dy·r + dx` holds input channel `c`
/// sampled at row offset `dy` and column offset `dx`.
fn unshuffle_raw(x: &[f64], (c, h, w): (usize, usize, usize), r: usize) -> Vec<f64> {
    let (oh, ow) = (h / r, w / r);
    let mut out = vec![0.0; x.len()];
    for ch in 0..c {
        for dy in 0..r {
            for dx in 0..r {
                let oc = (ch * r + dy) * r + dx;
                for i in 0..oh {
                    for j in 0..ow {
                        out[(oc * oh + i) * ow + j] = x[(ch * h + i * r + dy) * w + j * r + dx];
                    }
                }
            }
        }
    }
    out
}

/// Inverse of [`unshuffle_raw`]; `(c, h, w)` are the *input* extents.
fn shuffle_raw(x: &[f64], (c, h, w): (usize, usize, usize), r: usize) -> Vec<f64> {
    let (oc_count, oh, ow) = (c / (r * r), h * r, w * r);
    let mut out = vec![0.0; x.len()];
    for ch in 0..oc_count {
        for dy in 0..r {
            for dx in 0..r {
                let ic = (ch * r + dy) * r + dx;
                for i in 0..h {
                    for j in 0..w {
                        out[(ch * oh + i * r + dy) * ow + j * r + dx] = x[(ic * h + i) * w + j];
                    }
                }
            }
        }
    }
    out
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

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        // Ops whose inputs are all constants are folded into constant leaves.
        let op = if requires_grad { op } else { Op::Leaf };
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Trainable leaf.
    pub fn param(&mut self, t: Tensor) -> Result<Var> {
        let t = finite("param", t)?;
        Ok(self.push(t, Op::Leaf, true))
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> Result<Var> {
        let t = finite("constant", t)?;
        Ok(self.push(t, Op::Leaf, false))
    }

    /// Stop-gradient: same value, cut from the tape.
    pub fn detach(&mut self, x: Var) -> Var {
        let value = self.value(x).clone();
        self.push(value, Op::Leaf, false)
    }

    fn broadcast_kind(op: &'static str, a: &Tensor, b: &Tensor) -> Result<Broadcast> {
        if a.shape() == b.shape() {
            Ok(Broadcast::Same)
        } else if b.numel() == 1 {
            Ok(Broadcast::Scalar)
        } else if a.rank() == b.rank() && b.shape()[0] == 1 && a.shape()[1..] == b.shape()[1..] {
            Ok(Broadcast::Leading)
        } else {
            Err(TensorError::ShapeMismatch {
                op,
                lhs: a.shape().to_vec(),
                rhs: b.shape().to_vec(),
            })
        }
    }

    fn binary(&mut self, kind: Binary, a: Var, b: Var) -> Result<Var> {
        let name = match kind {
            Binary::Add => "add",
            Binary::Sub => "sub",
            Binary::Mul => "mul",
        };
        let (ta, tb) = (self.value(a), self.value(b));
        let bc = Self::broadcast_kind(name, ta, tb)?;
        let f = |x: f64, y: f64| match kind {
            Binary::Add => x + y,
            Binary::Sub => x - y,
            Binary::Mul => x * y,
        };
        let bd = tb.data();
        let data: Vec<f64> = match bc {
            Broadcast::Same => ta.data().iter().zip(bd).map(|(&x, &y)| f(x, y)).collect(),
            Broadcast::Scalar => ta.data().iter().map(|&x| f(x, bd[0])).collect(),
            Broadcast::Leading => {
                let inner = bd.len();
                ta.data()
                    .iter()
                    .enumerate()
                    .map(|(i, &x)| f(x, bd[i % inner]))
                    .collect()
            }
        };
        let out = finite(name, Tensor::new(ta.shape(), data)?)?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(out, Op::Binary(kind, a, b, bc), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Mul, a, b)
    }

    /// Multiplies channel `c` of `x` (leading axis) by `g[c]`.
    pub fn channel_scale(&mut self, x: Var, g: Var) -> Result<Var> {
        let (tx, tg) = (self.value(x), self.value(g));
        let c = tx.shape()[0];
        if tg.numel() != c {
            return Err(TensorError::ShapeMismatch {
                op: "channel_scale",
                lhs: tx.shape().to_vec(),
                rhs: tg.shape().to_vec(),
            });
        }
        let inner = tx.numel() / c;
        let gd = tg.data();
        let data = tx
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| v * gd[i / inner])
            .collect();
        let out = finite("channel_scale", Tensor::new(tx.shape(), data)?)?;
        let rg = self.any_grad(&[x, g]);
        Ok(self.push(out, Op::ChannelScale(x, g), rg))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (m, k) = mat_dims("matmul", ta)?;
        let (k2, n) = mat_dims("matmul", tb)?;
        if k != k2 {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                lhs: ta.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            });
        }
        let out = Tensor::new([m, n], matmul_raw(ta.data(), tb.data(), m, k, n))?;
        let out = finite("matmul", out)?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(out, Op::Matmul(a, b), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let ta = self.value(a);
        let (m, n) = mat_dims("transpose", ta)?;
        let out = Tensor::new([n, m], transpose_raw(ta.data(), m, n))?;
        let rg = self.any_grad(&[a]);
        Ok(self.push(out, Op::Transpose(a), rg))
    }

    /// Numerically stable softmax along `axis` (max subtracted per slice).
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let tx = self.value(x);
        if axis >= tx.rank() {
            return invalid(
                "softmax",
                format!("axis {axis} out of range for {:?}", tx.shape()),
            );
        }
        let (outer, len, inner) = around_axis(tx.shape(), axis);
        let src = tx.data();
        let mut out = vec![0.0; src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |j: usize| (o * len + j) * inner + i;
                let max = (0..len)
                    .map(|j| src[at(j)])
                    .fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for j in 0..len {
                    let e = (src[at(j)] - max).exp();
                    out[at(j)] = e;
                    total += e;
                }
                for j in 0..len {
                    out[at(j)] /= total;
                }
            }
        }
        let out = finite("softmax", Tensor::new(tx.shape(), out)?)?;
        let rg = self.any_grad(&[x]);
        Ok(self.push(out, Op::Softmax { x, axis }, rg))
    }

    pub fn pixel_unshuffle(&mut self, x: Var, r: usize) -> Result<Var> {
        let tx = self.value(x);
        let (c, h, w) = tx.dims3()?;
        if r == 0 || h % r != 0 || w % r != 0 {
            return invalid("pixel_unshuffle", format!("{h}×{w} not divisible by {r}"));
        }
        let out = Tensor::new(
            [c * r * r, h / r, w / r],
            unshuffle_raw(tx.data(), (c, h, w), r),
        )?;
        let rg = self.any_grad(&[x]);
        Ok(self.push(out, Op::PixelUnshuffle(x, r), rg))
    }

    pub fn pixel_shuffle(&mut self, x: Var, r: usize) -> Result<Var> {
        let tx = self.value(x);
        let (c, h, w) = tx.dims3()?;
        if r == 0 || c % (r * r) != 0 {
            return invalid(
                "pixel_shuffle",
                format!("{c} channels not divisible by {r}²"),
            );
        }
        let out = Tensor::new(
            [c / (r * r), h * r, w * r],
            shuffle_raw(tx.data(), (c, h, w), r),
        )?;
        let rg = self.any_grad(&[x]);
        Ok(self.push(out, Op::PixelShuffle(x, r), rg))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshape(shape)?;
        let rg = self.any_grad(&[x]);
        Ok(self.push(out, Op::Reshape(x), rg))
    }

    /// Slice `[start, start + len)` of the leading axis.
    pub fn narrow(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let tx = self.value(x);
        let lead = tx.shape()[0];
        if len == 0 || start + len > lead {
            return invalid(
                "narrow",
                format!("[{start}, {}) outside 0..{lead}", start + len),
            );
        }
        let inner = tx.numel() / lead;
        let mut shape = tx.shape().to_vec();
        shape[0] = len;
        let out = Tensor::new(
            shape,
            tx.data()[start * inner..(start + len) * inner].to_vec(),
        )?;
        let rg = self.any_grad(&[x]);
        Ok(self.push(out, Op::Narrow { x, start }, rg))
    }

    /// Concatenation along the leading axis.
    pub fn concat(&mut self, xs: &[Var]) -> Result<Var> {
        let Some(&first) = xs.first() else {
            return invalid("concat", "no inputs");
        };
        let tail = self.value(first).shape()[1..].to_vec();
        let mut lead = 0;
        let mut data = Vec::new();
        for &v in xs {
            let t = self.value(v);
            if t.shape()[1..] != tail[..] {
                return Err(TensorError::ShapeMismatch {
                    op: "concat",
                    lhs: self.value(first).shape().to_vec(),
                    rhs: t.shape().to_vec(),
                });
            }
            lead += t.shape()[0];
            data.extend_from_slice(t.data());
        }
        let mut shape = vec![lead];
        shape.extend_from_slice(&tail);
        let out = Tensor::new(shape, data)?;
        let rg = self.any_grad(xs);
        Ok(self.push(out, Op::Concat(xs.to_vec()), rg))
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, spec: ConvSpec) -> Result<Var> {
        let (tx, tw) = (self.value(x), self.value(w));
        let tb = b.map(|b| self.value(b));
        let (oh, ow) = conv::check_operands(&spec, tx.shape(), tw.shape(), tb.map(|t| t.shape()))?;
        let (_, h, wd) = tx.dims3()?;
        let data = conv::forward(&spec, tx.data(), (h, wd), tw.data(), tb.map(|t| t.data()));
        let out = finite("conv2d", Tensor::new([spec.out_channels, oh, ow], data)?)?;
        let mut inputs = vec![x, w];
        inputs.extend(b);
        let rg = self.any_grad(&inputs);
        Ok(self.push(out, Op::Conv2d { x, w, b, spec }, rg))
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let tx = self.value(x);
        let (c, h, w) = tx.dims3()?;
        let (tg, tb) = (self.value(gamma), self.value(beta));
        if tg.numel() != c || tb.numel() != c {
            return Err(TensorError::ShapeMismatch {
                op: "layer_norm",
                lhs: tx.shape().to_vec(),
                rhs: tg.shape().to_vec(),
            });
        }
        let data = norm::forward(tx.data(), c, h * w, tg.data(), tb.data());
        let out = finite("layer_norm", Tensor::new([c, h, w], data)?)?;
        let rg = self.any_grad(&[x, gamma, beta]);
        Ok(self.push(out, Op::LayerNorm { x, gamma, beta }, rg))
    }

    pub fn activation(&mut self, x: Var, act: Activation) -> Result<Var> {
        let out = finite(act.name(), self.value(x).map(|v| act.apply(v)))?;
        let rg = self.any_grad(&[x]);
        Ok(self.push(out, Op::Activation(x, act), rg))
    }

    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        self.activation(x, Activation::Gelu)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.activation(x, Activation::Relu)
    }

    pub fn abs(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(f64::abs);
        let rg = self.any_grad(&[x]);
        Ok(self.push(out, Op::Abs(x), rg))
    }

    /// Divides each last-axis row by `max(‖row‖₂, eps)`.
    pub fn l2_normalize(&mut self, x: Var, eps: f64) -> Result<Var> {
        let tx = self.value(x);
        let n = *tx.shape().last().expect("tensors have rank ≥ 1");
        let mut data = tx.data().to_vec();
        for row in data.chunks_exact_mut(n) {
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt().max(eps);
            row.iter_mut().for_each(|v| *v /= norm);
        }
        let out = finite("l2_normalize", Tensor::new(tx.shape(), data)?)?;
        let rg = self.any_grad(&[x]);
        Ok(self.push(out, Op::L2Normalize { x, eps }, rg))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let out = finite("sum", Tensor::scalar(self.value(x).sum()))?;
        let rg = self.any_grad(&[x]);
        Ok(self.push(out, Op::Sum(x), rg))
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let out = finite("mean", Tensor::scalar(t.sum() / t.numel() as f64))?;
        let rg = self.any_grad(&[x]);
        Ok(self.push(out, Op::Mean(x), rg))
    }

    /// Reverse sweep from a scalar `loss`. Every trainable leaf gets an entry;
    /// leaves the loss does not depend on get zeros.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if self.backward_done {
            return Err(TensorError::BackwardTwice);
        }
        let lt = self.value(loss);
        if lt.numel() != 1 {
            return Err(TensorError::NonScalarLoss(lt.shape().to_vec()));
        }
        self.backward_done = true;

        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        let mut out = Gradients::default();

        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else {
                if matches!(node.op, Op::Leaf) {
                    out.grads
                        .insert(Var(id), Tensor::zeros(node.value.shape())?);
                }
                continue;
            };
            if matches!(node.op, Op::Leaf) {
                out.grads
                    .insert(Var(id), Tensor::new(node.value.shape(), g)?);
                continue;
            }
            for (input, contribution) in self.vjp(id, &g) {
                if !self.nodes[input.0].requires_grad {
                    continue;
                }
                match &mut grads[input.0] {
                    Some(acc) => acc.iter_mut().zip(&contribution).for_each(|(a, c)| *a += c),
                    slot @ None => *slot = Some(contribution),
                }
            }
        }
        // Leaves created after the loss cannot influence it.
        for (id, node) in self.nodes.iter().enumerate().skip(loss.0 + 1) {
            if node.requires_grad && matches!(node.op, Op::Leaf) {
                out.grads
                    .insert(Var(id), Tensor::zeros(node.value.shape())?);
            }
        }
        Ok(out)
    }

    /// Input gradients of node `id` given its output gradient `g`.
    fn vjp(&self, id: usize, g: &[f64]) -> Vec<(Var, Vec<f64>)> {
        let node = &self.nodes[id];
        let val = |v: Var| self.nodes[v.0].value.data();
        match &node.op {
            Op::Leaf => Vec::new(),
            &Op::Binary(kind, a, b, bc) => {
                let (ad, bd) = (val(a), val(b));
                let bidx = |i: usize| match bc {
                    Broadcast::Same => i,
                    Broadcast::Scalar => 0,
                    Broadcast::Leading => i % bd.len(),
                };
                let da: Vec<f64> = match kind {
                    Binary::Add | Binary::Sub => g.to_vec(),
                    Binary::Mul => g
                        .iter()
                        .enumerate()
                        .map(|(i, gv)| gv * bd[bidx(i)])
                        .collect(),
                };
                let mut db = vec![0.0; bd.len()];
                for (i, gv) in g.iter().enumerate() {
                    db[bidx(i)] += match kind {
                        Binary::Add => *gv,
                        Binary::Sub => -gv,
                        Binary::Mul => gv * ad[i],
                    };
                }
                vec![(a, da), (b, db)]
            }
            &Op::ChannelScale(x, s) => {
                let (xd, sd) = (val(x), val(s));
                let inner = xd.len() / sd.len();
                let dx = g
                    .iter()
                    .enumerate()
                    .map(|(i, gv)| gv * sd[i / inner])
                    .collect();
                let ds = g
                    .chunks_exact(inner)
                    .zip(xd.chunks_exact(inner))
                    .map(|(gc, xc)| gc.iter().zip(xc).map(|(a, b)| a * b).sum())
                    .collect();
                vec![(x, dx), (s, ds)]
            }
            &Op::Matmul(a, b) => {
                let (m, k) = mat_dims("matmul", &self.nodes[a.0].value).unwrap();
                let n = self.nodes[b.0].value.shape()[1];
                let (ad, bd) = (val(a), val(b));
                // dA = dC·Bᵀ
                let mut da = vec![0.0; m * k];
                for i in 0..m {
                    let grow = &g[i * n..][..n];
                    for p in 0..k {
                        da[i * k + p] =
                            grow.iter().zip(&bd[p * n..][..n]).map(|(x, y)| x * y).sum();
                    }
                }
                // dB = Aᵀ·dC
                let mut db = vec![0.0; k * n];
                for i in 0..m {
                    let grow = &g[i * n..][..n];
                    for p in 0..k {
                        let aip = ad[i * k + p];
                        for (d, gv) in db[p * n..][..n].iter_mut().zip(grow) {
                            *d += aip * gv;
                        }
                    }
                }
                vec![(a, da), (b, db)]
            }
            &Op::Transpose(a) => {
                let (m, n) = mat_dims("transpose", &node.value).unwrap();
                vec![(a, transpose_raw(g, m, n))]
            }
            &Op::Softmax { x, axis } => {
                let y = node.value.data();
                let (outer, len, inner) = around_axis(node.value.shape(), axis);
                let mut dx = vec![0.0; y.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |j: usize| (o * len + j) * inner + i;
                        let dot: f64 = (0..len).map(|j| g[at(j)] * y[at(j)]).sum();
                        for j in 0..len {
                            dx[at(j)] = y[at(j)] * (g[at(j)] - dot);
                        }
                    }
                }
                vec![(x, dx)]
            }
            &Op::PixelUnshuffle(x, r) => {
                let dims = node.value.dims3().unwrap();
                vec![(x, shuffle_raw(g, dims, r))]
            }
            &Op::PixelShuffle(x, r) => {
                let dims = node.value.dims3().unwrap();
                vec![(x, unshuffle_raw(g, dims, r))]
            }
            &Op::Reshape(x) => vec![(x, g.to_vec())],
            &Op::Narrow { x, start } => {
                let mut dx = vec![0.0; val(x).len()];
                let inner = node.value.numel() / node.value.shape()[0];
                dx[start * inner..][..g.len()].copy_from_slice(g);
                vec![(x, dx)]
            }
            Op::Concat(xs) => {
                let mut offset = 0;
                xs.iter()
                    .map(|&v| {
                        let n = val(v).len();
                        let part = g[offset..offset + n].to_vec();
                        offset += n;
                        (v, part)
                    })
                    .collect()
            }
            &Op::Conv2d { x, w, b, spec } => {
                let (_, h, wd) = self.nodes[x.0].value.dims3().unwrap();
                let grads = conv::backward(&spec, val(x), (h, wd), val(w), g);
                let mut out = vec![(x, grads.input), (w, grads.weight)];
                if let (Some(b), Some(db)) = (b, grads.bias) {
                    out.push((b, db));
                }
                out
            }
            &Op::LayerNorm { x, gamma, beta } => {
                let (c, h, w) = self.nodes[x.0].value.dims3().unwrap();
                let grads = norm::backward(val(x), c, h * w, val(gamma), g);
                vec![(x, grads.input), (gamma, grads.gamma), (beta, grads.beta)]
            }
            &Op::Activation(x, act) => {
                let dx = val(x)
                    .iter()
                    .zip(g)
                    .map(|(&v, gv)| gv * act.derivative(v))
                    .collect();
                vec![(x, dx)]
            }
            &Op::Abs(x) => {
                let dx = val(x)
                    .iter()
                    .zip(g)
                    .map(|(&v, gv)| {
                        if v > 0.0 {
                            *gv
                        } else if v < 0.0 {
                            -gv
                        } else {
                            0.0
                        }
                    })
                    .collect();
                vec![(x, dx)]
            }
            &Op::L2Normalize { x, eps } => {
                let xd = val(x);
                let y = node.value.data();
                let n = *node.value.shape().last().unwrap();
                let mut dx = vec![0.0; xd.len()];
                for ((dr, xr), (yr, gr)) in dx
                    .chunks_exact_mut(n)
                    .zip(xd.chunks_exact(n))
                    .zip(y.chunks_exact(n).zip(g.chunks_exact(n)))
                {
                    let norm = xr.iter().map(|v| v * v).sum::<f64>().sqrt();
                    if norm > eps {
                        let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                        for j in 0..n {
                            dr[j] = (gr[j] - yr[j] * dot) / norm;
                        }
                    } else {
                        for j in 0..n {
                            dr[j] = gr[j] / eps;
                        }
                    }
                }
                vec![(x, dx)]
            }
            &Op::Sum(x) => vec![(x, vec![g[0]; val(x).len()])],
            &Op::Mean(x) => {
                let n = val(x).len();
                vec![(x, vec![g[0] / n as f64; n])]
            }
        }
    }
}

/// Pure-value pixel unshuffle for callers outside a graph.
pub fn pixel_unshuffle(t: &Tensor, r: usize) -> Result<Tensor> {
    let mut g = Graph::new();
    let x = g.constant(t.clone())?;
    let y = g.pixel_unshuffle(x, r)?;
    Ok(g.value(y).clone())
}

/// Pure-value pixel shuffle for callers outside a graph.
pub fn pixel_shuffle(t: &Tensor, r: usize) -> Result<Tensor> {
    let mut g = Graph::new();
    let x = g.constant(t.clone())?;
    let y = g.pixel_shuffle(x, r)?;
    Ok(g.value(y).clone())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape, data.to_vec()).unwrap()
    }

    #[test]
    fn mul_by_zeros_and_add_zero_identity() {
        let mut g = Graph::new();
        let a = g.constant(t(&[3], &[1.0, 2.0, 3.0])).unwrap();
        let z = g.constant(Tensor::zeros([3]).unwrap()).unwrap();
        let m = g.mul(a, z).unwrap();
        assert_eq!(g.value(m).data(), &[0.0, 0.0, 0.0]);
        let x = g.constant(t(&[3], &[1.5, -2.25, 1e-300])).unwrap();
        let s = g.add(x, z).unwrap();
        assert!(g.value(s).bitwise_eq(g.value(x)));
    }

    #[test]
    fn elementwise_mul_2x2() {
        let mut g = Graph::new();
        let a = g.constant(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0])).unwrap();
        let b = g.constant(t(&[2, 2], &[5.0, 6.0, 7.0, 8.0])).unwrap();
        let m = g.mul(a, b).unwrap();
        assert_eq!(g.value(m).data(), &[5.0, 12.0, 21.0, 32.0]);
    }

    #[test]
    fn broadcast_rule_is_strict() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::ones([2, 3, 4]).unwrap()).unwrap();
        let lead = g.constant(Tensor::ones([1, 3, 4]).unwrap()).unwrap();
        let s = g.constant(Tensor::scalar(2.0)).unwrap();
        let trailing = g.constant(Tensor::ones([2, 1, 1]).unwrap()).unwrap();
        assert!(g.mul(a, lead).is_ok());
        assert!(g.mul(a, s).is_ok());
        assert!(matches!(
            g.mul(a, trailing),
            Err(TensorError::ShapeMismatch { .. })
        ));
        // only the right operand broadcasts
        assert!(g.mul(lead, a).is_err());
    }

    #[test]
    fn matmul_examples() {
        let mut g = Graph::new();
        let a = g.constant(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0])).unwrap();
        let b = g.constant(t(&[2, 2], &[5.0, 6.0, 7.0, 8.0])).unwrap();
        let c = g.matmul(a, b).unwrap();
        assert_eq!(g.value(c).data(), &[19.0, 22.0, 43.0, 50.0]);
        let eye = g.constant(t(&[2, 2], &[1.0, 0.0, 0.0, 1.0])).unwrap();
        let bb = g
            .constant(t(&[2, 3], &[0.5, -1.0, 2.0, 3.0, 7.0, -0.25]))
            .unwrap();
        let ib = g.matmul(eye, bb).unwrap();
        assert_eq!(g.value(ib), g.value(bb));
        let zero = g.constant(Tensor::zeros([2, 3]).unwrap()).unwrap();
        let az = g.matmul(a, zero).unwrap();
        assert_eq!(g.value(az).data(), &[0.0; 6]);
        assert!(g.matmul(bb, a).is_err());
    }

    #[test]
    fn softmax_examples() {
        let mut g = Graph::new();
        let z = g.constant(Tensor::zeros([3]).unwrap()).unwrap();
        let s = g.softmax(z, 0).unwrap();
        for v in g.value(s).data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let x = g.constant(t(&[3], &[1.0, 2.0, 3.0])).unwrap();
        let s = g.softmax(x, 0).unwrap();
        let expect = [0.09003057, 0.24472847, 0.66524096];
        for (v, e) in g.value(s).data().iter().zip(expect) {
            assert!((v - e).abs() < 1e-8);
        }
        let shifted = g.constant(t(&[3], &[101.0, 102.0, 103.0])).unwrap();
        let s2 = g.softmax(shifted, 0).unwrap();
        assert!(g.value(s2).max_abs_diff(g.value(s)).unwrap() < 1e-15);
        assert!(g.softmax(x, 1).is_err());
    }

    #[test]
    fn unshuffle_documented_ordering() {
        let mut g = Graph::new();
        let x = g.constant(t(&[1, 2, 2], &[1.0, 2.0, 3.0, 4.0])).unwrap();
        let u = g.pixel_unshuffle(x, 2).unwrap();
        assert_eq!(g.value(u).shape(), &[4, 1, 1]);
        assert_eq!(g.value(u).data(), &[1.0, 2.0, 3.0, 4.0]);
        assert!(g.pixel_unshuffle(x, 3).is_err());
        let bad = g.constant(Tensor::ones([3, 2, 2]).unwrap()).unwrap();
        assert!(g.pixel_shuffle(bad, 2).is_err());
    }

    #[test]
    fn backward_simple_cases() {
        let mut g = Graph::new();
        let x = g.param(t(&[3], &[0.3, -1.0, 2.0])).unwrap();
        let s = g.sum(x).unwrap();
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[1.0, 1.0, 1.0]);

        let mut g = Graph::new();
        let x = g.param(t(&[2], &[1.0, 2.0])).unwrap();
        let sq = g.mul(x, x).unwrap();
        let s = g.sum(sq).unwrap();
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[2.0, 4.0]);
    }

    #[test]
    fn detached_branch_and_unused_leaf_get_zero() {
        let mut g = Graph::new();
        let x = g.param(t(&[2], &[1.0, -3.0])).unwrap();
        let unused = g.param(t(&[4], &[1.0; 4])).unwrap();
        let d = g.detach(x);
        let prod = g.mul(d, d).unwrap();
        let loss = g.sum(prod).unwrap();
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[0.0, 0.0]);
        assert_eq!(grads.get(unused).unwrap().data(), &[0.0; 4]);
    }

    #[test]
    fn backward_errors() {
        let mut g = Graph::new();
        let x = g.param(t(&[2], &[1.0, 2.0])).unwrap();
        assert!(matches!(g.backward(x), Err(TensorError::NonScalarLoss(_))));
        let s = g.sum(x).unwrap();
        g.backward(s).unwrap();
        assert!(matches!(g.backward(s), Err(TensorError::BackwardTwice)));
    }

    #[test]
    fn non_finite_values_are_errors() {
        let mut g = Graph::new();
        let big = g.constant(Tensor::full([2], 1e300).unwrap()).unwrap();
        assert!(matches!(
            g.mul(big, big),
            Err(TensorError::NonFinite { op: "mul" })
        ));
        assert!(g.constant(Tensor::full([1], f64::NAN).unwrap()).is_err());
    }
}
