//! Reverse-mode differentiation over a recorded tape.
//!
//! A [`Graph`] owns every intermediate value. Operations append a node and
//! return a [`Var`] handle; since a node can only reference earlier nodes the
//! tape is already in topological order, and [`Graph::backward`] walks it in
//! reverse.
//!
//! ```
//! use capsforge_core::autodiff::Graph;
//! use capsforge_core::Tensor;
//!
//! let mut g = Graph::<f64>::new();
//! let x = g.param(Tensor::from_f64([3], &[1.0, -2.0, 0.5]).unwrap());
//! let sq = g.mul(x, x).unwrap();
//! let total = g.sum(sq).unwrap();
//! let loss = g.scale(total, 0.5).unwrap();
//! let grads = g.backward(loss).unwrap();
//! assert_eq!(grads.get(x).unwrap().data(), &[1.0, -2.0, 0.5]);
//! ```

mod check;
mod ops;

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

pub use check::{grad_check, grad_check_many, relative_error};
pub use ops::{MarginConfig, MaskSelect};

use crate::kernels::{self, ConvGeometry};
use crate::{Error, Real, Result, Tensor};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
pub(crate) enum Op<T> {
    Leaf,
    Conv2d { input: Var, kernel: Var, bias: Var, geom: ConvGeometry },
    Relu(Var),
    Sigmoid(Var),
    MaxPool { input: Var, argmax: Vec<usize> },
    Dense { x: Var, w: Var, b: Var },
    Softmax { x: Var, axis: usize },
    Reshape(Var),
    ToCapsules { x: Var, types: usize, dim: usize, grid: usize },
    Squash(Var),
    CapsNorm(Var),
    Predict { u: Var, w: Var },
    WeightedSum { c: Var, uhat: Var },
    Agreement { uhat: Var, v: Var },
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Sum(Var),
    Mask { x: Var, gate: Vec<T> },
    MarginLoss { norms: Var, labels: Vec<usize>, cfg: MarginConfig },
    SumSquaredError { recon: Var, target: Vec<T> },
    CrossEntropy { logits: Var, labels: Vec<usize>, probs: Vec<T> },
}

impl<T> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Conv2d { .. } => "conv2d",
            Op::Relu(_) => "relu",
            Op::Sigmoid(_) => "sigmoid",
            Op::MaxPool { .. } => "maxpool2d",
            Op::Dense { .. } => "dense",
            Op::Softmax { .. } => "softmax",
            Op::Reshape(_) => "reshape",
            Op::ToCapsules { .. } => "to_capsules",
            Op::Squash(_) => "squash",
            Op::CapsNorm(_) => "capsule_norms",
            Op::Predict { .. } => "predict_vectors",
            Op::WeightedSum { .. } => "weighted_sum",
            Op::Agreement { .. } => "agreement",
            Op::Add(..) => "add",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::Sum(_) => "sum",
            Op::Mask { .. } => "mask",
            Op::MarginLoss { .. } => "margin_loss",
            Op::SumSquaredError { .. } => "sum_squared_error",
            Op::CrossEntropy { .. } => "cross_entropy",
        }
    }

    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::Conv2d { input, kernel, bias, .. } => vec![*input, *kernel, *bias],
            Op::Dense { x, w, b } => vec![*x, *w, *b],
            Op::Predict { u: a, w: b }
            | Op::WeightedSum { c: a, uhat: b }
            | Op::Agreement { uhat: a, v: b }
            | Op::Add(a, b)
            | Op::Mul(a, b) => vec![*a, *b],
            Op::Relu(x)
            | Op::Sigmoid(x)
            | Op::Reshape(x)
            | Op::Squash(x)
            | Op::CapsNorm(x)
            | Op::Scale(x, _)
            | Op::Sum(x)
            | Op::MaxPool { input: x, .. }
            | Op::Softmax { x, .. }
            | Op::ToCapsules { x, .. }
            | Op::Mask { x, .. }
            | Op::MarginLoss { norms: x, .. }
            | Op::SumSquaredError { recon: x, .. }
            | Op::CrossEntropy { logits: x, .. } => vec![*x],
        }
    }
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// The tape. Single writer; values are immutable once recorded.
#[derive(Debug, Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    consumed: bool,
}

/// Gradients produced by [`Graph::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            consumed: false,
        }
    }

    /// Trainable leaf: receives a gradient on [`Graph::backward`].
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    /// Non-trainable leaf.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub(crate) fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Result<Var> {
        let node = self.nodes.len();
        if !value.is_finite() {
            return Err(Error::NonFinite {
                op: op.name(),
                node,
                shape: value.shape().to_vec(),
            });
        }
        let requires_grad = op.inputs().iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(node))
    }

    /// Back-propagates from a one-element `loss`.
    ///
    /// Every trainable leaf gets a gradient of its own shape (zeros when the
    /// loss does not depend on it). The tape is consumed: a second call fails.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients<T>> {
        if self.consumed {
            return Err(Error::contract("backward", "graph was already consumed by backward"));
        }
        let root = &self.nodes[loss.0].value;
        if root.len() != 1 {
            return Err(Error::contract(
                "backward",
                format!("loss must be a scalar, got shape {:?}", root.shape()),
            ));
        }
        self.consumed = true;

        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].requires_grad {
                continue;
            }
            let Some(up) = grads[idx].take() else { continue };
            if matches!(self.nodes[idx].op, Op::Leaf) {
                grads[idx] = Some(up);
                continue;
            }
            self.propagate(idx, &up, &mut grads)?;
        }

        let grads = self
            .nodes
            .iter()
            .zip(grads)
            .map(|(node, g)| match (&node.op, node.requires_grad) {
                (Op::Leaf, true) => {
                    let data = g.unwrap_or_else(|| vec![T::zero(); node.value.len()]);
                    Tensor::new(node.value.shape().to_vec(), data).ok()
                }
                _ => None,
            })
            .collect::<Vec<_>>();
        for (idx, g) in grads.iter().enumerate() {
            if let Some(g) = g {
                if !g.is_finite() {
                    return Err(Error::NonFinite {
                        op: "backward",
                        node: idx,
                        shape: g.shape().to_vec(),
                    });
                }
            }
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, idx: usize, up: &[T], grads: &mut [Option<Vec<T>>]) -> Result<()> {
        let node = &self.nodes[idx];
        let val = |v: Var| &self.nodes[v.0].value;
        let wants = |v: Var| self.nodes[v.0].requires_grad;
        let mut send = |v: Var, g: Vec<T>| accumulate(grads, v, g);
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d { input, kernel, bias, geom } => {
                let (di, dk, db) =
                    kernels::conv2d_backward(val(*input), val(*kernel), geom, up, wants(*input));
                if let Some(di) = di {
                    send(*input, di);
                }
                if wants(*kernel) {
                    send(*kernel, dk);
                }
                if wants(*bias) {
                    send(*bias, db);
                }
            }
            Op::Relu(x) => {
                let g = val(*x)
                    .data()
                    .iter()
                    .zip(up)
                    .map(|(&xv, &u)| if xv > T::zero() { u } else { T::zero() })
                    .collect();
                send(*x, g);
            }
            Op::Sigmoid(x) => {
                let g = node
                    .value
                    .data()
                    .iter()
                    .zip(up)
                    .map(|(&y, &u)| u * y * (T::one() - y))
                    .collect();
                send(*x, g);
            }
            Op::MaxPool { input, argmax } => {
                let mut g = vec![T::zero(); val(*input).len()];
                for (&src, &u) in argmax.iter().zip(up) {
                    g[src] = g[src] + u;
                }
                send(*input, g);
            }
            Op::Dense { x, w, b } => {
                let (xs, ws) = (val(*x).shape(), val(*w).shape());
                let (n, i, o) = (xs[0], xs[1], ws[1]);
                if wants(*x) {
                    let mut dx = vec![T::zero(); n * i];
                    crate::gemm::gemm_nt(n, o, i, up, val(*w).data(), &mut dx);
                    send(*x, dx);
                }
                if wants(*w) {
                    let mut dw = vec![T::zero(); i * o];
                    crate::gemm::gemm_tn(n, i, o, val(*x).data(), up, &mut dw);
                    send(*w, dw);
                }
                if wants(*b) {
                    let mut db = vec![T::zero(); o];
                    for row in up.chunks_exact(o) {
                        for (d, &u) in db.iter_mut().zip(row) {
                            *d = *d + u;
                        }
                    }
                    send(*b, db);
                }
            }
            Op::Softmax { x, axis } => {
                send(*x, kernels::softmax_axis_backward(&node.value, up, *axis));
            }
            Op::Reshape(x) => send(*x, up.to_vec()),
            Op::ToCapsules { x, types, dim, grid } => {
                let n = val(*x).shape()[0];
                let mut g = vec![T::zero(); up.len()];
                for b in 0..n {
                    for t in 0..*types {
                        for d in 0..*dim {
                            for p in 0..*grid {
                                let src = ((b * types + t) * grid + p) * dim + d;
                                let dst = ((b * types + t) * dim + d) * grid + p;
                                g[dst] = up[src];
                            }
                        }
                    }
                }
                send(*x, g);
            }
            Op::Squash(x) => send(*x, kernels::squash_backward(val(*x), up)),
            Op::CapsNorm(x) => {
                let xv = val(*x);
                let d = *xv.shape().last().unwrap_or(&1);
                let mut g = vec![T::zero(); xv.len()];
                for ((cap, out), (&nrm, &u)) in xv
                    .data()
                    .chunks_exact(d)
                    .zip(g.chunks_exact_mut(d))
                    .zip(node.value.data().iter().zip(up))
                {
                    for (o, &c) in out.iter_mut().zip(cap) {
                        *o = u * c / nrm;
                    }
                }
                send(*x, g);
            }
            Op::Predict { u, w } => {
                let (du, dw) = kernels::predict_vectors_backward(val(*u), val(*w), up);
                if wants(*u) {
                    send(*u, du);
                }
                if wants(*w) {
                    send(*w, dw);
                }
            }
            Op::WeightedSum { c, uhat } => {
                let (dc, du) = kernels::weighted_sum_backward(val(*c), val(*uhat), up);
                if wants(*c) {
                    send(*c, dc);
                }
                if wants(*uhat) {
                    send(*uhat, du);
                }
            }
            Op::Agreement { uhat, v } => {
                let (du, dv) = kernels::agreement_backward(val(*uhat), val(*v), up);
                if wants(*uhat) {
                    send(*uhat, du);
                }
                if wants(*v) {
                    send(*v, dv);
                }
            }
            Op::Add(a, b) => {
                if wants(*a) {
                    send(*a, up.to_vec());
                }
                if wants(*b) {
                    send(*b, up.to_vec());
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (val(*a).data(), val(*b).data());
                if wants(*a) {
                    send(*a, up.iter().zip(bv).map(|(&u, &y)| u * y).collect());
                }
                if wants(*b) {
                    send(*b, up.iter().zip(av).map(|(&u, &x)| u * x).collect());
                }
            }
            Op::Scale(x, k) => send(*x, up.iter().map(|&u| u * *k).collect()),
            Op::Sum(x) => send(*x, vec![up[0]; val(*x).len()]),
            Op::Mask { x, gate } => send(*x, up.iter().zip(gate).map(|(&u, &m)| u * m).collect()),
            Op::MarginLoss { norms, labels, cfg } => {
                send(*norms, ops::margin_loss_grad(val(*norms), labels, cfg, up[0]));
            }
            Op::SumSquaredError { recon, target } => {
                let r = val(*recon);
                let n = T::lit(r.shape()[0].max(1) as f64);
                let k = T::lit(2.0) * up[0] / n;
                send(
                    *recon,
                    r.data().iter().zip(target).map(|(&a, &t)| k * (a - t)).collect(),
                );
            }
            Op::CrossEntropy { logits, labels, probs } => {
                let classes = val(*logits).shape()[1];
                let n = T::lit(labels.len().max(1) as f64);
                let mut g: Vec<T> = probs.iter().map(|&p| p * up[0] / n).collect();
                for (row, &l) in labels.iter().enumerate() {
                    g[row * classes + l] = g[row * classes + l] - up[0] / n;
                }
                send(*logits, g);
            }
        }
        Ok(())
    }
}

fn accumulate<T: Real>(grads: &mut [Option<Vec<T>>], v: Var, g: Vec<T>) {
    match &mut grads[v.0] {
        Some(existing) => {
            for (e, x) in existing.iter_mut().zip(g) {
                *e = *e + x;
            }
        }
        slot @ None => *slot = Some(g),
    }
}
