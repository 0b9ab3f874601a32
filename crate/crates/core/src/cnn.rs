//! Small convolutional baseline: conv/ReLU/max-pool blocks, one hidden dense
//! layer and a linear classifier. Logits are returned unnormalised; the
//! cross-entropy loss applies the softmax.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::autodiff::{Graph, Var};
use crate::capsule::predictions;
use crate::params::{ConvParams, DenseParams, Parameters};
use crate::{Error, Real, Result, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ConvBlock {
    pub maps: usize,
    pub kernel: usize,
    pub stride: usize,
    /// Max-pool window (and stride) after the ReLU.
    pub pool: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CnnConfig {
    pub input_channels: usize,
    /// `[height, width]`
    pub input_hw: [usize; 2],
    pub blocks: Vec<ConvBlock>,
    pub dense_width: usize,
    pub num_classes: usize,
}

impl CnnConfig {
    /// Three 3×3 blocks of 32, 64 and 128 maps, each followed by a 2×2 pool,
    /// then a 256-wide dense layer.
    pub fn baseline(channels: usize, hw: usize, classes: usize) -> Self {
        Self::with_maps(channels, hw, classes, [32, 64, 128], 256)
    }

    pub fn with_maps(channels: usize, hw: usize, classes: usize, maps: [usize; 3], dense_width: usize) -> Self {
        CnnConfig {
            input_channels: channels,
            input_hw: [hw, hw],
            blocks: maps
                .iter()
                .map(|&m| ConvBlock {
                    maps: m,
                    kernel: 3,
                    stride: 1,
                    pool: Some(2),
                })
                .collect(),
            dense_width,
            num_classes: classes,
        }
    }

    /// Spatial size after every block, checking that none collapses.
    pub fn block_shapes(&self) -> Result<Vec<[usize; 3]>> {
        let [mut h, mut w] = self.input_hw;
        let mut out = Vec::with_capacity(self.blocks.len());
        for (k, b) in self.blocks.iter().enumerate() {
            if b.maps == 0 || b.kernel == 0 || b.stride == 0 || b.pool == Some(0) {
                return Err(Error::Config(format!("block {k}: sizes must be positive")));
            }
            if b.kernel > h || b.kernel > w {
                return Err(Error::Config(format!(
                    "block {k}: {}×{} kernel does not fit a {h}×{w} input",
                    b.kernel, b.kernel
                )));
            }
            h = (h - b.kernel) / b.stride + 1;
            w = (w - b.kernel) / b.stride + 1;
            if let Some(p) = b.pool {
                if p > h || p > w {
                    return Err(Error::Config(format!("block {k}: {p}×{p} pool does not fit a {h}×{w} map")));
                }
                h = (h - p) / p + 1;
                w = (w - p) / p + 1;
            }
            out.push([b.maps, h, w]);
        }
        Ok(out)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_channels == 0 || self.input_hw.contains(&0) {
            return Err(Error::Config("input sizes must be positive".into()));
        }
        if self.dense_width == 0 || self.num_classes == 0 {
            return Err(Error::Config("dense_width and num_classes must be positive".into()));
        }
        self.block_shapes().map(|_| ())
    }

    /// Width of the flattened feature map entering the dense layer.
    pub fn flat_len(&self) -> Result<usize> {
        let shapes = self.block_shapes()?;
        Ok(match shapes.last() {
            Some(s) => s.iter().product(),
            None => self.input_channels * self.input_hw[0] * self.input_hw[1],
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CnnParams<T> {
    pub blocks: Vec<ConvParams<T>>,
    pub hidden: DenseParams<T>,
    pub output: DenseParams<T>,
}

impl<T: Real> CnnParams<T> {
    pub fn zeros(config: &CnnConfig) -> Result<Self> {
        let flat = config.flat_len()?;
        let mut channels = config.input_channels;
        let blocks = config
            .blocks
            .iter()
            .map(|b| {
                let p = ConvParams::zeros(b.maps, channels, b.kernel);
                channels = b.maps;
                p
            })
            .collect();
        Ok(CnnParams {
            blocks,
            hidden: DenseParams::zeros(flat, config.dense_width),
            output: DenseParams::zeros(config.dense_width, config.num_classes),
        })
    }
}

impl<T: Real> Parameters<T> for CnnParams<T> {
    fn named(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = Vec::new();
        for (k, b) in self.blocks.iter().enumerate() {
            out.push((format!("block.{k}.weight"), &b.weight));
            out.push((format!("block.{k}.bias"), &b.bias));
        }
        out.push(("hidden.weight".into(), &self.hidden.weight));
        out.push(("hidden.bias".into(), &self.hidden.bias));
        out.push(("output.weight".into(), &self.output.weight));
        out.push(("output.bias".into(), &self.output.bias));
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = Vec::new();
        for b in &mut self.blocks {
            out.push(&mut b.weight);
            out.push(&mut b.bias);
        }
        out.extend([
            &mut self.hidden.weight,
            &mut self.hidden.bias,
            &mut self.output.weight,
            &mut self.output.bias,
        ]);
        out
    }
}

/// Parameter leaves of a [`Cnn`] on one tape, in [`Parameters::named`] order.
#[derive(Clone, Debug)]
pub struct BoundCnn(Vec<Var>);

impl BoundCnn {
    pub fn from_vars(vars: &[Var]) -> Self {
        BoundCnn(vars.to_vec())
    }

    pub fn vars(&self) -> Vec<Var> {
        self.0.clone()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Cnn<T> {
    pub config: CnnConfig,
    pub params: CnnParams<T>,
}

impl<T: Real> Cnn<T> {
    pub fn new(config: CnnConfig, params: CnnParams<T>) -> Result<Self> {
        config.validate()?;
        let expected = CnnParams::<T>::zeros(&config)?;
        let (want, got) = (expected.named(), params.named());
        if want.len() != got.len() {
            return Err(Error::Config(format!("expected {} tensors, got {}", want.len(), got.len())));
        }
        for ((name, w), (_, g)) in want.iter().zip(&got) {
            if w.shape() != g.shape() {
                return Err(Error::Config(format!(
                    "{name}: expected shape {:?}, got {:?}",
                    w.shape(),
                    g.shape()
                )));
            }
        }
        Ok(Cnn { config, params })
    }

    pub fn zeros(config: CnnConfig) -> Result<Self> {
        config.validate()?;
        let params = CnnParams::zeros(&config)?;
        Ok(Cnn { config, params })
    }

    pub fn bind(&self, g: &mut Graph<T>, trainable: bool) -> BoundCnn {
        BoundCnn(
            self.params
                .tensors()
                .into_iter()
                .map(|t| if trainable { g.param(t.clone()) } else { g.constant(t.clone()) })
                .collect(),
        )
    }

    /// Logits `[N, classes]`.
    pub fn forward(&self, g: &mut Graph<T>, p: &BoundCnn, images: Var) -> Result<Var> {
        let c = &self.config;
        let s = g.shape(images).to_vec();
        if s.len() != 4 || s[1] != c.input_channels || s[2..] != c.input_hw {
            return Err(Error::dim(
                "cnn",
                format!(
                    "images must be [N,{},{},{}], got {s:?}",
                    c.input_channels, c.input_hw[0], c.input_hw[1]
                ),
            ));
        }
        let mut x = images;
        for (k, b) in c.blocks.iter().enumerate() {
            x = g.conv2d(x, p.0[2 * k], p.0[2 * k + 1], b.stride)?;
            x = g.relu(x)?;
            if let Some(w) = b.pool {
                x = g.maxpool2d(x, w, w)?;
            }
        }
        let flat = g.value(x).len() / s[0].max(1);
        x = g.reshape(x, &[s[0], flat])?;
        let d = 2 * c.blocks.len();
        x = g.dense(x, p.0[d], p.0[d + 1])?;
        x = g.relu(x)?;
        g.dense(x, p.0[d + 2], p.0[d + 3])
    }

    /// Mean cross-entropy of the logits against `labels`; returns `(loss, logits)`.
    pub fn objective(&self, g: &mut Graph<T>, p: &BoundCnn, images: &Tensor<T>, labels: &[usize]) -> Result<(Var, Var)> {
        let x = g.constant(images.clone());
        let logits = self.forward(g, p, x)?;
        Ok((g.cross_entropy(logits, labels)?, logits))
    }

    pub fn logits(&self, images: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let p = self.bind(&mut g, false);
        let x = g.constant(images.clone());
        let y = self.forward(&mut g, &p, x)?;
        Ok(g.value(y).clone())
    }

    pub fn predict(&self, images: &Tensor<T>) -> Result<Vec<usize>> {
        Ok(predictions(&self.logits(images)?))
    }
}

/// Mean `−log softmax(logits)[label]` without a tape.
pub fn cross_entropy<T: Real>(logits: &Tensor<T>, labels: &[usize]) -> Result<T> {
    let mut g = Graph::new();
    let x = g.constant(logits.clone());
    let l = g.cross_entropy(x, labels)?;
    Ok(g.value(l).data()[0])
}
