use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::autodiff::MarginConfig;
use crate::{Error, Result};

/// Layer sizes of a CapsNet.
#[derive(Clone, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CapsNetConfig {
    pub conv1_maps: usize,
    pub conv1_kernel: usize,
    pub primary_caps_types: usize,
    pub primary_caps_dim: usize,
    pub primary_kernel: usize,
    pub primary_stride: usize,
    pub digit_caps_count: usize,
    pub digit_caps_dim: usize,
    pub routing_iterations: usize,
    pub input_channels: usize,
    /// `[height, width]`
    pub input_hw: [usize; 2],
    /// Widths of the decoder's dense layers; the last equals the flattened image size.
    pub decoder_widths: Vec<usize>,
}

impl CapsNetConfig {
    /// Full-size network for `channels × hw × hw` images with ten classes.
    pub fn standard(channels: usize, hw: usize) -> Self {
        CapsNetConfig {
            conv1_maps: 256,
            conv1_kernel: 9,
            primary_caps_types: 32,
            primary_caps_dim: 8,
            primary_kernel: 9,
            primary_stride: 2,
            digit_caps_count: 10,
            digit_caps_dim: 16,
            routing_iterations: 3,
            input_channels: channels,
            input_hw: [hw, hw],
            decoder_widths: vec![512, 1024, channels * hw * hw],
        }
    }

    /// 28×28 grayscale (MNIST, Fashion-MNIST).
    pub fn mnist() -> Self {
        Self::standard(1, 28)
    }

    /// 32×32 RGB (CIFAR-10); yields an 8×8 primary grid.
    pub fn cifar10() -> Self {
        Self::standard(3, 32)
    }

    /// Small enough for exhaustive finite-difference checks: 12×12 input,
    /// 4 conv maps, 2 capsule types, 2 classes.
    pub fn tiny() -> Self {
        CapsNetConfig {
            conv1_maps: 4,
            conv1_kernel: 5,
            primary_caps_types: 2,
            primary_caps_dim: 4,
            primary_kernel: 3,
            primary_stride: 2,
            digit_caps_count: 2,
            digit_caps_dim: 4,
            routing_iterations: 3,
            input_channels: 1,
            input_hw: [12, 12],
            decoder_widths: vec![8, 16, 144],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: alloc::string::String| Err(Error::Config(msg));
        if self.routing_iterations < 1 {
            return fail(format!("routing_iterations must be at least 1, got {}", self.routing_iterations));
        }
        let sizes = [
            ("conv1_maps", self.conv1_maps),
            ("conv1_kernel", self.conv1_kernel),
            ("primary_caps_types", self.primary_caps_types),
            ("primary_caps_dim", self.primary_caps_dim),
            ("primary_kernel", self.primary_kernel),
            ("primary_stride", self.primary_stride),
            ("digit_caps_count", self.digit_caps_count),
            ("digit_caps_dim", self.digit_caps_dim),
            ("input_channels", self.input_channels),
        ];
        if let Some((name, _)) = sizes.iter().find(|(_, v)| *v == 0) {
            return fail(format!("{name} must be positive"));
        }
        let [h, w] = self.input_hw;
        if self.conv1_kernel > h || self.conv1_kernel > w {
            return fail(format!("conv1 kernel {} does not fit {h}x{w} input", self.conv1_kernel));
        }
        let [ch, cw] = self.conv1_hw();
        if self.primary_kernel > ch || self.primary_kernel > cw {
            return fail(format!(
                "primary kernel {} does not fit the {ch}x{cw} conv1 output",
                self.primary_kernel
            ));
        }
        match self.decoder_widths.last() {
            Some(&last) if last == self.image_len() => {}
            other => {
                return fail(format!(
                    "decoder output width {other:?} must equal the flattened image size {}",
                    self.image_len()
                ))
            }
        }
        if self.decoder_widths.contains(&0) {
            return fail(format!("decoder widths must be positive: {:?}", self.decoder_widths));
        }
        Ok(())
    }

    pub fn conv1_hw(&self) -> [usize; 2] {
        let [h, w] = self.input_hw;
        [h + 1 - self.conv1_kernel.min(h), w + 1 - self.conv1_kernel.min(w)]
    }

    /// Spatial size of the PrimaryCaps grid.
    pub fn primary_grid(&self) -> [usize; 2] {
        let [h, w] = self.conv1_hw();
        let k = self.primary_kernel;
        let s = self.primary_stride.max(1);
        [(h.saturating_sub(k)) / s + 1, (w.saturating_sub(k)) / s + 1]
    }

    pub fn num_primary_caps(&self) -> usize {
        let [gh, gw] = self.primary_grid();
        gh * gw * self.primary_caps_types
    }

    pub fn image_len(&self) -> usize {
        self.input_channels * self.input_hw[0] * self.input_hw[1]
    }

    /// Length of the concatenated class embedding fed to the decoder.
    pub fn embedding_len(&self) -> usize {
        self.digit_caps_count * self.digit_caps_dim
    }
}

/// Loss constants: margin hinges and the reconstruction weight.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LossConfig {
    pub m_plus: f64,
    pub m_minus: f64,
    pub lambda_down: f64,
    pub recon_weight: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            m_plus: 0.9,
            m_minus: 0.1,
            lambda_down: 0.5,
            recon_weight: 0.0005,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.m_minus && self.m_minus < self.m_plus && self.m_plus < 1.0) {
            return Err(Error::Config(format!(
                "margins must satisfy 0 < m_minus < m_plus < 1, got {} and {}",
                self.m_minus, self.m_plus
            )));
        }
        if !(self.lambda_down >= 0.0 && self.recon_weight >= 0.0) {
            return Err(Error::Config("loss weights must be non-negative".into()));
        }
        Ok(())
    }

    pub fn margin(&self) -> MarginConfig {
        MarginConfig {
            m_plus: self.m_plus,
            m_minus: self.m_minus,
            lambda_down: self.lambda_down,
        }
    }
}
