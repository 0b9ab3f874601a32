//! Routing by agreement between two capsule layers.
//!
//! With prediction vectors `û[i,j,:]` and logits `b` starting at zero, each of
//! the `r` iterations computes
//!
//! ```text
//! c_i  = softmax(b_i)                 over output capsules j
//! s_j  = Σ_i c_ij · û[i,j,:]
//! v_j  = squash(s_j)
//! b_ij = b_ij + û[i,j,:] · v_j
//! ```
//!
//! The logit update also runs on the final iteration; the returned `v` is the
//! one computed in that iteration, so the last update never reaches the output.
//! Every step is recorded on the tape, so gradients flow through all unrolled
//! iterations, couplings included.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::autodiff::{Graph, Var};
use crate::{Error, Real, Result, Tensor};

/// Tape handles for one routing iteration. `logits` are the values the
/// iteration started from.
#[derive(Clone, Copy, Debug)]
pub struct IterationVars {
    pub logits: Var,
    pub couplings: Var,
    pub totals: Var,
    pub outputs: Var,
    pub agreements: Var,
}

/// Tape handles for a whole routing pass.
#[derive(Clone, Debug)]
pub struct RoutingTrace {
    pub predictions: Var,
    pub iterations: Vec<IterationVars>,
}

/// Values of one routing iteration.
#[derive(Clone, Debug, PartialEq)]
pub struct RoutingIteration<T> {
    /// `b` at the start of the iteration, `[N, in, out]`.
    pub logits: Tensor<T>,
    /// `c`, `[N, in, out]`.
    pub couplings: Tensor<T>,
    /// `s`, `[N, out, dim]`.
    pub totals: Tensor<T>,
    /// `v`, `[N, out, dim]`.
    pub outputs: Tensor<T>,
    /// `a = û · v`, `[N, in, out]`.
    pub agreements: Tensor<T>,
}

/// Values recorded during a routing pass.
#[derive(Clone, Debug, PartialEq)]
pub struct RoutingState<T> {
    /// `û`, `[N, in, out, dim]`.
    pub predictions: Tensor<T>,
    pub iterations: Vec<RoutingIteration<T>>,
}

impl RoutingTrace {
    pub fn state<T: Real>(&self, g: &Graph<T>) -> RoutingState<T> {
        RoutingState {
            predictions: g.value(self.predictions).clone(),
            iterations: self
                .iterations
                .iter()
                .map(|it| RoutingIteration {
                    logits: g.value(it.logits).clone(),
                    couplings: g.value(it.couplings).clone(),
                    totals: g.value(it.totals).clone(),
                    outputs: g.value(it.outputs).clone(),
                    agreements: g.value(it.agreements).clone(),
                })
                .collect(),
        }
    }

    /// Checks the routing invariants directly on the tape values.
    pub fn check_invariants<T: Real>(&self, g: &Graph<T>, tol: f64) -> core::result::Result<(), String> {
        for (t, it) in self.iterations.iter().enumerate() {
            check_iteration(
                t,
                g.value(it.logits),
                g.value(it.couplings),
                g.value(it.outputs),
                tol,
            )?;
        }
        Ok(())
    }
}

impl<T: Real> RoutingState<T> {
    /// Checks, for every iteration: couplings of each input capsule sum to 1
    /// within `tol`, every output length is strictly below 1, and the first
    /// iteration starts from all-zero logits.
    pub fn check_invariants(&self, tol: f64) -> core::result::Result<(), String> {
        for (t, it) in self.iterations.iter().enumerate() {
            check_iteration(t, &it.logits, &it.couplings, &it.outputs, tol)?;
        }
        Ok(())
    }

    /// Final output capsules `[N, out, dim]`.
    pub fn outputs(&self) -> &Tensor<T> {
        &self.iterations.last().expect("at least one iteration").outputs
    }

    /// Drops a leading batch axis of size one from every tensor.
    fn squeeze_batch(self) -> Self {
        let squeeze = |t: Tensor<T>| {
            let shape = t.shape()[1..].to_vec();
            t.reshape(shape).expect("same element count")
        };
        RoutingState {
            predictions: squeeze(self.predictions),
            iterations: self
                .iterations
                .into_iter()
                .map(|it| RoutingIteration {
                    logits: squeeze(it.logits),
                    couplings: squeeze(it.couplings),
                    totals: squeeze(it.totals),
                    outputs: squeeze(it.outputs),
                    agreements: squeeze(it.agreements),
                })
                .collect(),
        }
    }
}

fn check_iteration<T: Real>(
    t: usize,
    logits: &Tensor<T>,
    couplings: &Tensor<T>,
    outputs: &Tensor<T>,
    tol: f64,
) -> core::result::Result<(), String> {
    let out = *couplings.shape().last().unwrap_or(&1);
    for (row, c) in couplings.data().chunks_exact(out.max(1)).enumerate() {
        let total: f64 = c.iter().map(|x| x.as_f64()).sum();
        if (total - 1.0).abs() > tol {
            return Err(format!(
                "iteration {}: couplings of input capsule row {row} sum to {total}",
                t + 1
            ));
        }
    }
    let dim = *outputs.shape().last().unwrap_or(&1);
    for (j, v) in outputs.data().chunks_exact(dim.max(1)).enumerate() {
        let len = num_traits::Float::sqrt(v.iter().map(|x| x.as_f64() * x.as_f64()).sum::<f64>());
        if len >= 1.0 {
            return Err(format!("iteration {}: output capsule {j} has length {len}", t + 1));
        }
    }
    if t == 0 && logits.data().iter().any(|&b| b != T::zero()) {
        return Err("iteration 1 did not start from zero logits".into());
    }
    Ok(())
}

/// Records `iterations` rounds of routing for batched predictions
/// `û: [N, in, out, dim]` and returns the output capsules `[N, out, dim]`.
pub fn route_on_graph<T: Real>(g: &mut Graph<T>, predictions: Var, iterations: usize) -> Result<(Var, RoutingTrace)> {
    if iterations < 1 {
        return Err(Error::contract("route", format!("need at least one iteration, got {iterations}")));
    }
    let s = g.shape(predictions).to_vec();
    if s.len() != 4 {
        return Err(Error::dim("route", format!("û must be [N,in,out,dim], got {s:?}")));
    }
    let mut logits = g.constant(Tensor::zeros([s[0], s[1], s[2]]));
    let mut trace = RoutingTrace {
        predictions,
        iterations: Vec::with_capacity(iterations),
    };
    let mut outputs = predictions;
    for _ in 0..iterations {
        let couplings = g.softmax(logits, 2)?;
        let totals = g.weighted_sum(couplings, predictions)?;
        outputs = g.squash(totals)?;
        let agreements = g.agreement(predictions, outputs)?;
        trace.iterations.push(IterationVars {
            logits,
            couplings,
            totals,
            outputs,
            agreements,
        });
        logits = g.add(logits, agreements)?;
    }
    Ok((outputs, trace))
}

/// Routes one set of predictions `û: [in, out, dim]`; returns `v: [out, dim]`
/// and the full per-iteration record (without a batch axis).
pub fn route<T: Real>(predictions: &Tensor<T>, iterations: usize) -> Result<(Tensor<T>, RoutingState<T>)> {
    let s = predictions.shape();
    if s.len() != 3 {
        return Err(Error::dim("route", format!("û must be [in,out,dim], got {s:?}")));
    }
    let mut shape = alloc::vec![1];
    shape.extend_from_slice(s);
    let mut g = Graph::new();
    let u = g.constant(predictions.clone().reshape(shape)?);
    let (v, trace) = route_on_graph(&mut g, u, iterations)?;
    let state = trace.state(&g).squeeze_batch();
    let out = g.value(v).clone();
    let out_shape = out.shape()[1..].to_vec();
    Ok((out.reshape(out_shape)?, state))
}
