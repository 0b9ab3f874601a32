//! Resolved training configuration and the `full` / `desk` presets.

use serde::{Deserialize, Serialize};

use capsforge_core::capsule::{CapsNetConfig, LossConfig};
use capsforge_core::cnn::CnnConfig;
use capsforge_core::optim::OptimizerConfig;
use capsforge_core::train::{Arch, ModelConfig};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Mnist,
    Fashion,
    Cifar10,
}

impl DatasetKind {
    pub fn as_str(self) -> &'static str {
        match self {
            DatasetKind::Mnist => "mnist",
            DatasetKind::Fashion => "fashion",
            DatasetKind::Cifar10 => "cifar10",
        }
    }

    /// `(channels, side)` of the images.
    pub fn image_dims(self) -> (usize, usize) {
        match self {
            DatasetKind::Mnist | DatasetKind::Fashion => (1, 28),
            DatasetKind::Cifar10 => (3, 32),
        }
    }

    pub fn num_classes(self) -> usize {
        10
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    Full,
    /// Narrower networks on data subsets; minutes on one CPU core.
    Desk,
}

/// Every knob of a training run with defaults filled in.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub dataset: DatasetKind,
    pub scale: Scale,
    pub model: ModelConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerConfig,
    pub seed: u64,
    /// Use only the first `n` training samples.
    pub train_subset: Option<usize>,
    /// Use only the first `n` test samples.
    pub test_subset: Option<usize>,
    pub eval_batch_size: usize,
    /// Epochs (1-based) that leave a checkpoint besides the final one.
    pub snapshot_epochs: Vec<usize>,
    /// Assert routing invariants on every training batch with this tolerance.
    pub routing_check: Option<f64>,
}

pub const DEFAULT_SEED: u64 = 42;
pub const DESK_TRAIN_SUBSET: usize = 2000;
pub const DESK_TEST_SUBSET: usize = 500;
pub const DESK_EPOCHS: usize = 10;
/// Smaller than the full-scale default: with 2000 samples, 128-sample
/// batches leave too few optimiser steps in ten epochs.
pub const DESK_BATCH_SIZE: usize = 16;
pub const FULL_EPOCHS: usize = 50;
pub const FULL_BATCH_SIZE: usize = 128;

impl TrainConfig {
    pub fn preset(dataset: DatasetKind, arch: Arch, scale: Scale) -> Self {
        let (ch, hw) = dataset.image_dims();
        let classes = dataset.num_classes();
        let model = match (arch, scale) {
            (Arch::CapsNet, Scale::Full) => ModelConfig::CapsNet {
                net: CapsNetConfig::standard(ch, hw),
                loss: LossConfig::default(),
            },
            (Arch::CapsNet, Scale::Desk) => ModelConfig::CapsNet {
                net: CapsNetConfig {
                    conv1_maps: 64,
                    primary_caps_types: 8,
                    ..CapsNetConfig::standard(ch, hw)
                },
                loss: LossConfig::default(),
            },
            (Arch::Cnn, Scale::Full) => ModelConfig::Cnn {
                net: CnnConfig::baseline(ch, hw, classes),
            },
            (Arch::Cnn, Scale::Desk) => ModelConfig::Cnn {
                net: CnnConfig::with_maps(ch, hw, classes, [16, 32, 64], 128),
            },
        };
        let desk = scale == Scale::Desk;
        TrainConfig {
            dataset,
            scale,
            model,
            epochs: if desk { DESK_EPOCHS } else { FULL_EPOCHS },
            batch_size: if desk { DESK_BATCH_SIZE } else { FULL_BATCH_SIZE },
            optimizer: OptimizerConfig::default(),
            seed: DEFAULT_SEED,
            train_subset: desk.then_some(DESK_TRAIN_SUBSET),
            test_subset: desk.then_some(DESK_TEST_SUBSET),
            eval_batch_size: 100,
            snapshot_epochs: vec![2],
            routing_check: None,
        }
    }

    pub fn arch(&self) -> Arch {
        self.model.arch()
    }

    /// `None` for the CNN.
    pub fn routing_iterations(&self) -> Option<usize> {
        match &self.model {
            ModelConfig::CapsNet { net, .. } => Some(net.routing_iterations),
            ModelConfig::Cnn { .. } => None,
        }
    }

    pub fn set_routing_iterations(&mut self, r: usize) -> Result<()> {
        match &mut self.model {
            ModelConfig::CapsNet { net, .. } => {
                net.routing_iterations = r;
                Ok(())
            }
            ModelConfig::Cnn { .. } => Err(Error::Incompatible("the CNN baseline has no routing".into())),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Core(capsforge_core::Error::Config(m)));
        if self.epochs < 1 {
            return bad(format!("epochs must be at least 1, got {}", self.epochs));
        }
        if self.batch_size < 1 || self.eval_batch_size < 1 {
            return bad("batch sizes must be at least 1".into());
        }
        if !(self.optimizer.learning_rate > 0.0) {
            return bad(format!("learning rate must be positive, got {}", self.optimizer.learning_rate));
        }
        self.optimizer.validate()?;
        self.model.validate()?;
        let (ch, hw) = self.dataset.image_dims();
        if self.model.input_shape() != [ch, hw, hw] || self.model.num_classes() != self.dataset.num_classes() {
            return Err(Error::Incompatible(format!(
                "model expects {:?} inputs, {} provides [{ch}, {hw}, {hw}]",
                self.model.input_shape(),
                self.dataset.as_str()
            )));
        }
        Ok(())
    }
}
