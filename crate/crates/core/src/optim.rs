//! First-order optimisers over a model's parameter list.

use alloc::format;
use alloc::vec::Vec;

use crate::{Error, Real, Result, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            kind: OptimizerKind::Adam,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate >= 0.0
            && self.learning_rate.is_finite()
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid optimizer settings {self:?}")))
        }
    }
}

/// Plain SGD or Adam with bias-corrected moments.
#[derive(Clone, Debug)]
pub struct Optimizer<T> {
    config: OptimizerConfig,
    steps: u64,
    first: Vec<Tensor<T>>,
    second: Vec<Tensor<T>>,
}

impl<T: Real> Optimizer<T> {
    pub fn new(config: OptimizerConfig) -> Result<Self> {
        config.validate()?;
        Ok(Optimizer {
            config,
            steps: 0,
            first: Vec::new(),
            second: Vec::new(),
        })
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.config
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Applies one update. `params` and `grads` must line up one to one and
    /// keep the same shapes from call to call.
    pub fn step(&mut self, params: Vec<&mut Tensor<T>>, grads: &[Tensor<T>]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::contract(
                "optimizer",
                format!("{} parameters but {} gradients", params.len(), grads.len()),
            ));
        }
        for (k, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != g.shape() {
                return Err(Error::dim(
                    "optimizer",
                    format!("tensor {k}: parameter {:?} vs gradient {:?}", p.shape(), g.shape()),
                ));
            }
        }
        self.steps += 1;
        let lr = T::lit(self.config.learning_rate);
        match self.config.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.into_iter().zip(grads) {
                    for (w, &d) in p.data_mut().iter_mut().zip(g.data()) {
                        *w = *w - lr * d;
                    }
                }
            }
            OptimizerKind::Adam => {
                if self.first.is_empty() {
                    self.first = grads.iter().map(|g| Tensor::zeros(g.shape().to_vec())).collect();
                    self.second = self.first.clone();
                }
                if self.first.len() != grads.len() {
                    return Err(Error::contract("optimizer", "parameter list changed between steps"));
                }
                let c = &self.config;
                let (b1, b2, eps) = (T::lit(c.beta1), T::lit(c.beta2), T::lit(c.eps));
                let t = self.steps as i32;
                let corr1 = T::one() - T::lit(num_traits::Float::powi(c.beta1, t));
                let corr2 = T::one() - T::lit(num_traits::Float::powi(c.beta2, t));
                for (k, (p, g)) in params.into_iter().zip(grads).enumerate() {
                    let (m, v) = (self.first[k].data_mut(), self.second[k].data_mut());
                    for (i, (w, &d)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                        m[i] = b1 * m[i] + (T::one() - b1) * d;
                        v[i] = b2 * v[i] + (T::one() - b2) * d * d;
                        let mhat = m[i] / corr1;
                        let vhat = v[i] / corr2;
                        *w = *w - lr * mhat / (vhat.sqrt() + eps);
                    }
                }
            }
        }
        Ok(())
    }
}
