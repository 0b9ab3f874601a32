use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::{Graph, Op, Var};
use crate::kernels::{self, ConvGeometry};
use crate::{Error, Real, Result, Tensor};

/// Which class section of a `[N, J, D]` capsule tensor survives masking.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MaskSelect {
    /// Keep only class `j`; every other section becomes zero.
    Class(usize),
    /// Keep every section.
    All,
}

/// Margin-loss hinge constants.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MarginConfig {
    pub m_plus: f64,
    pub m_minus: f64,
    pub lambda_down: f64,
}

impl<T: Real> Graph<T> {
    pub fn conv2d(&mut self, input: Var, kernel: Var, bias: Var, stride: usize) -> Result<Var> {
        let geom = ConvGeometry::new(self.shape(input), self.shape(kernel), self.shape(bias), stride)?;
        let out = kernels::conv2d(self.value(input), self.value(kernel), self.value(bias), stride)?;
        self.push(out, Op::Conv2d { input, kernel, bias, geom })
    }

    /// `max(0, x)`; the subgradient at exactly zero is zero.
    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(|v| if v > T::zero() { v } else { T::zero() });
        self.push(out, Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(|v| T::one() / (T::one() + (-v).exp()));
        self.push(out, Op::Sigmoid(x))
    }

    pub fn maxpool2d(&mut self, input: Var, window: usize, stride: usize) -> Result<Var> {
        let (out, argmax) = kernels::maxpool2d(self.value(input), window, stride)?;
        self.push(out, Op::MaxPool { input, argmax })
    }

    /// `x[N,I] · w[I,O] + b[O]`.
    pub fn dense(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let out = kernels::dense(self.value(x), self.value(w), self.value(b))?;
        self.push(out, Op::Dense { x, w, b })
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let out = kernels::softmax_axis(self.value(x), axis)?;
        self.push(out, Op::Softmax { x, axis })
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshape(shape.to_vec())?;
        self.push(out, Op::Reshape(x))
    }

    /// Regroups a `[N, types·dim, H, W]` feature map into capsules
    /// `[N, types·H·W, dim]`.
    ///
    /// Capsule `t·H·W + y·W + x` holds channels `t·dim .. (t+1)·dim` at grid
    /// position `(y, x)`: type-major, then row, then column.
    pub fn to_capsules(&mut self, x: Var, dim: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 4 || dim == 0 || s[1] % dim != 0 {
            return Err(Error::dim(
                "to_capsules",
                format!("axis 1 of {s:?} must be a multiple of capsule dim {dim}"),
            ));
        }
        let (n, types, grid) = (s[0], s[1] / dim, s[2] * s[3]);
        let src = self.value(x).data();
        let mut out = vec![T::zero(); src.len()];
        for b in 0..n {
            for t in 0..types {
                for d in 0..dim {
                    for p in 0..grid {
                        out[((b * types + t) * grid + p) * dim + d] = src[((b * types + t) * dim + d) * grid + p];
                    }
                }
            }
        }
        let out = Tensor::new([n, types * grid, dim], out)?;
        self.push(out, Op::ToCapsules { x, types, dim, grid })
    }

    pub fn squash(&mut self, x: Var) -> Result<Var> {
        let out = kernels::squash(self.value(x))?;
        self.push(out, Op::Squash(x))
    }

    /// Lengths over the last axis.
    pub fn capsule_norms(&mut self, x: Var) -> Result<Var> {
        let out = kernels::capsule_norms(self.value(x))?;
        self.push(out, Op::CapsNorm(x))
    }

    pub fn predict_vectors(&mut self, u: Var, w: Var) -> Result<Var> {
        let out = kernels::predict_vectors_batched(self.value(u), self.value(w))?;
        self.push(out, Op::Predict { u, w })
    }

    pub fn weighted_sum(&mut self, c: Var, uhat: Var) -> Result<Var> {
        let out = kernels::weighted_sum(self.value(c), self.value(uhat))?;
        self.push(out, Op::WeightedSum { c, uhat })
    }

    pub fn agreement(&mut self, uhat: Var, v: Var) -> Result<Var> {
        let out = kernels::agreement(self.value(uhat), self.value(v))?;
        self.push(out, Op::Agreement { uhat, v })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        same_shape("add", x, y)?;
        let data = x.data().iter().zip(y.data()).map(|(&p, &q)| p + q).collect();
        let out = Tensor::new(x.shape().to_vec(), data)?;
        self.push(out, Op::Add(a, b))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        same_shape("mul", x, y)?;
        let data = x.data().iter().zip(y.data()).map(|(&p, &q)| p * q).collect();
        let out = Tensor::new(x.shape().to_vec(), data)?;
        self.push(out, Op::Mul(a, b))
    }

    pub fn scale(&mut self, x: Var, k: f64) -> Result<Var> {
        let k = T::lit(k);
        let out = self.value(x).map(|v| v * k);
        self.push(out, Op::Scale(x, k))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let total = self.value(x).data().iter().fold(T::zero(), |acc, &v| acc + v);
        self.push(Tensor::scalar(total), Op::Sum(x))
    }

    /// Flattens `[N, J, D]` to `[N, J·D]` and zeroes the sections not selected
    /// for each sample.
    pub fn mask(&mut self, x: Var, select: &[MaskSelect]) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 3 || s[0] != select.len() {
            return Err(Error::dim(
                "mask",
                format!("expected [N,J,D] with N = {} selections, got {s:?}", select.len()),
            ));
        }
        let (j_caps, d) = (s[1], s[2]);
        let mut gate = Vec::with_capacity(s.iter().product());
        for sel in select {
            match *sel {
                MaskSelect::All => gate.extend(core::iter::repeat_n(T::one(), j_caps * d)),
                MaskSelect::Class(k) if k < j_caps => {
                    for j in 0..j_caps {
                        let g = if j == k { T::one() } else { T::zero() };
                        gate.extend(core::iter::repeat_n(g, d));
                    }
                }
                MaskSelect::Class(k) => {
                    return Err(Error::contract(
                        "mask",
                        format!("class index {k} outside [0, {j_caps})"),
                    ))
                }
            }
        }
        let data = self
            .value(x)
            .data()
            .iter()
            .zip(&gate)
            .map(|(&v, &m)| if m == T::zero() { T::zero() } else { v })
            .collect();
        let out = Tensor::new([s[0], j_caps * d], data)?;
        self.push(out, Op::Mask { x, gate })
    }

    /// Batch mean of `Σ_k T_k·max(0, m⁺−‖v_k‖)² + λ·(1−T_k)·max(0, ‖v_k‖−m⁻)²`.
    pub fn margin_loss(&mut self, norms: Var, labels: &[usize], cfg: MarginConfig) -> Result<Var> {
        let nv = self.value(norms);
        check_labels("margin_loss", nv.shape(), labels)?;
        let (n, classes) = (nv.shape()[0], nv.shape()[1]);
        let (mp, mm, lam) = (T::lit(cfg.m_plus), T::lit(cfg.m_minus), T::lit(cfg.lambda_down));
        let mut total = T::zero();
        for (row, &label) in nv.data().chunks_exact(classes.max(1)).zip(labels) {
            let mut per = T::zero();
            for (k, &len) in row.iter().enumerate() {
                per = per
                    + if k == label {
                        let h = (mp - len).max(T::zero());
                        h * h
                    } else {
                        let h = (len - mm).max(T::zero());
                        lam * h * h
                    };
            }
            total = total + per;
        }
        let out = Tensor::scalar(total / T::lit(n.max(1) as f64));
        self.push(out, Op::MarginLoss { norms, labels: labels.to_vec(), cfg })
    }

    /// Batch mean of per-sample sums of squared differences to a constant target.
    pub fn sum_squared_error(&mut self, recon: Var, target: &Tensor<T>) -> Result<Var> {
        let r = self.value(recon);
        same_shape("sum_squared_error", r, target)?;
        let n = r.shape().first().copied().unwrap_or(1).max(1);
        let sse = r
            .data()
            .iter()
            .zip(target.data())
            .fold(T::zero(), |acc, (&a, &t)| acc + (a - t) * (a - t));
        let out = Tensor::scalar(sse / T::lit(n as f64));
        self.push(
            out,
            Op::SumSquaredError {
                recon,
                target: target.data().to_vec(),
            },
        )
    }

    /// Batch mean of `−log softmax(logits)[label]`.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let lv = self.value(logits);
        check_labels("cross_entropy", lv.shape(), labels)?;
        let classes = lv.shape()[1];
        let probs = kernels::softmax_axis(lv, 1)?.into_data();
        let mut total = T::zero();
        for (row, &label) in lv.data().chunks_exact(classes.max(1)).zip(labels) {
            let max = row.iter().fold(T::neg_infinity(), |m, &x| m.max(x));
            let lse = row.iter().fold(T::zero(), |acc, &x| acc + (x - max).exp()).ln() + max;
            total = total + lse - row[label];
        }
        let out = Tensor::scalar(total / T::lit(labels.len().max(1) as f64));
        self.push(
            out,
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
        )
    }
}

pub(super) fn margin_loss_grad<T: Real>(norms: &Tensor<T>, labels: &[usize], cfg: &MarginConfig, up: T) -> Vec<T> {
    let (n, classes) = (norms.shape()[0], norms.shape()[1]);
    let scale = up / T::lit(n.max(1) as f64);
    let two = T::lit(2.0);
    let (mp, mm, lam) = (T::lit(cfg.m_plus), T::lit(cfg.m_minus), T::lit(cfg.lambda_down));
    let mut g = vec![T::zero(); norms.len()];
    for (b, &label) in labels.iter().enumerate() {
        for k in 0..classes {
            let len = norms.data()[b * classes + k];
            g[b * classes + k] = scale
                * if k == label {
                    -two * (mp - len).max(T::zero())
                } else {
                    lam * two * (len - mm).max(T::zero())
                };
        }
    }
    g
}

fn same_shape<T: Real>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::dim(op, format!("shapes {:?} and {:?} differ", a.shape(), b.shape())));
    }
    Ok(())
}

fn check_labels(op: &'static str, shape: &[usize], labels: &[usize]) -> Result<()> {
    if shape.len() != 2 || shape[0] != labels.len() {
        return Err(Error::dim(
            op,
            format!("expected [N,classes] with N = {} labels, got {shape:?}", labels.len()),
        ));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= shape[1]) {
        return Err(Error::contract(op, format!("label {bad} outside [0, {})", shape[1])));
    }
    Ok(())
}
