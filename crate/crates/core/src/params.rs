//! Named collections of trainable tensors.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::{Error, Real, Result, Tensor};

/// A model's trainable tensors, in a fixed order with stable names.
pub trait Parameters<T: Real> {
    fn named(&self) -> Vec<(String, &Tensor<T>)>;

    /// Same order as [`Parameters::named`].
    fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>>;

    fn tensors(&self) -> Vec<&Tensor<T>> {
        self.named().into_iter().map(|(_, t)| t).collect()
    }

    fn count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// Name of the first tensor holding a NaN or infinity.
    fn first_non_finite(&self) -> Option<String> {
        self.named()
            .into_iter()
            .find(|(_, t)| !t.is_finite())
            .map(|(n, _)| n)
    }

    /// Overwrites every tensor from `(name, value)` pairs; names and shapes
    /// must match exactly.
    fn assign_named(&mut self, items: Vec<(String, Tensor<T>)>) -> Result<()> {
        let names: Vec<(String, Vec<usize>)> = self
            .named()
            .into_iter()
            .map(|(n, t)| (n, t.shape().to_vec()))
            .collect();
        if names.len() != items.len() {
            return Err(Error::Config(format!(
                "expected {} parameter tensors, got {}",
                names.len(),
                items.len()
            )));
        }
        for ((slot, (name, shape)), (got_name, value)) in self.tensors_mut().into_iter().zip(&names).zip(items) {
            if *name != got_name {
                return Err(Error::Config(format!("expected tensor {name}, found {got_name}")));
            }
            if value.shape() != &shape[..] {
                return Err(Error::Config(format!(
                    "tensor {name}: expected shape {shape:?}, found {:?}",
                    value.shape()
                )));
            }
            *slot = value;
        }
        Ok(())
    }
}

/// Weight `[in, out]` and bias `[out]` of a fully connected layer.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseParams<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Real> DenseParams<T> {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        DenseParams {
            weight: Tensor::zeros([inputs, outputs]),
            bias: Tensor::zeros([outputs]),
        }
    }
}

/// Kernel `[F, C, kH, kW]` and bias `[F]` of a convolution.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvParams<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Real> ConvParams<T> {
    pub fn zeros(filters: usize, channels: usize, kernel: usize) -> Self {
        ConvParams {
            weight: Tensor::zeros([filters, channels, kernel, kernel]),
            bias: Tensor::zeros([filters]),
        }
    }
}
