use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use super::config::{CapsNetConfig, LossConfig};
use super::routing::{route_on_graph, RoutingState, RoutingTrace};
use crate::autodiff::{Graph, MaskSelect, Var};
use crate::params::{ConvParams, DenseParams, Parameters};
use crate::{Error, Real, Result, Tensor};

/// Trainable tensors of a CapsNet.
#[derive(Clone, Debug, PartialEq)]
pub struct CapsNetParams<T> {
    pub conv1: ConvParams<T>,
    pub primary: ConvParams<T>,
    /// Transformation matrices `W[i, j]`: `[primary caps, classes, primary dim, digit dim]`.
    pub routing_weight: Tensor<T>,
    pub decoder: Vec<DenseParams<T>>,
}

impl<T: Real> CapsNetParams<T> {
    pub fn zeros(config: &CapsNetConfig) -> Self {
        let c = config;
        let mut decoder = Vec::with_capacity(c.decoder_widths.len());
        let mut width = c.embedding_len();
        for &out in &c.decoder_widths {
            decoder.push(DenseParams::zeros(width, out));
            width = out;
        }
        CapsNetParams {
            conv1: ConvParams::zeros(c.conv1_maps, c.input_channels, c.conv1_kernel),
            primary: ConvParams::zeros(
                c.primary_caps_types * c.primary_caps_dim,
                c.conv1_maps,
                c.primary_kernel,
            ),
            routing_weight: Tensor::zeros([
                c.num_primary_caps(),
                c.digit_caps_count,
                c.primary_caps_dim,
                c.digit_caps_dim,
            ]),
            decoder,
        }
    }
}

impl<T: Real> Parameters<T> for CapsNetParams<T> {
    fn named(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = alloc::vec![
            ("conv1.weight".into(), &self.conv1.weight),
            ("conv1.bias".into(), &self.conv1.bias),
            ("primary.weight".into(), &self.primary.weight),
            ("primary.bias".into(), &self.primary.bias),
            ("digit.routing_weight".into(), &self.routing_weight),
        ];
        for (k, layer) in self.decoder.iter().enumerate() {
            out.push((format!("decoder.{k}.weight"), &layer.weight));
            out.push((format!("decoder.{k}.bias"), &layer.bias));
        }
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = alloc::vec![
            &mut self.conv1.weight,
            &mut self.conv1.bias,
            &mut self.primary.weight,
            &mut self.primary.bias,
            &mut self.routing_weight,
        ];
        for layer in &mut self.decoder {
            out.push(&mut layer.weight);
            out.push(&mut layer.bias);
        }
        out
    }
}

/// Parameters recorded as leaves on a particular tape.
#[derive(Clone, Debug)]
pub struct BoundCapsNet {
    conv1: (Var, Var),
    primary: (Var, Var),
    routing_weight: Var,
    decoder: Vec<(Var, Var)>,
}

impl BoundCapsNet {
    /// Rebuilds the binding from handles in [`Parameters::named`] order.
    pub fn from_vars(vars: &[Var]) -> Result<Self> {
        if vars.len() < 7 || (vars.len() - 5) % 2 != 0 {
            return Err(Error::contract("bind", format!("cannot split {} handles into CapsNet parameters", vars.len())));
        }
        Ok(BoundCapsNet {
            conv1: (vars[0], vars[1]),
            primary: (vars[2], vars[3]),
            routing_weight: vars[4],
            decoder: vars[5..].chunks_exact(2).map(|p| (p[0], p[1])).collect(),
        })
    }

    /// Leaf handles in [`Parameters::named`] order.
    pub fn vars(&self) -> Vec<Var> {
        let mut out = alloc::vec![self.conv1.0, self.conv1.1, self.primary.0, self.primary.1, self.routing_weight];
        for &(w, b) in &self.decoder {
            out.push(w);
            out.push(b);
        }
        out
    }
}

/// Tape handles produced by [`CapsNet::forward`].
#[derive(Clone, Debug)]
pub struct CapsForward {
    /// `[N, classes, digit dim]`
    pub digit_caps: Var,
    /// `[N, classes]`
    pub norms: Var,
    pub routing: RoutingTrace,
}

/// Tape handles of the training objective.
#[derive(Clone, Debug)]
pub struct CapsObjective {
    pub total: Var,
    pub margin: Var,
    /// Weighted reconstruction term.
    pub reconstruction: Var,
    pub forward: CapsForward,
}

/// Forward-pass values without gradients.
#[derive(Clone, Debug)]
pub struct CapsInference<T> {
    pub digit_caps: Tensor<T>,
    pub norms: Tensor<T>,
    pub predictions: Vec<usize>,
    pub routing: RoutingState<T>,
}

/// A CapsNet: configuration plus parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct CapsNet<T> {
    pub config: CapsNetConfig,
    pub params: CapsNetParams<T>,
}

impl<T: Real> CapsNet<T> {
    pub fn new(config: CapsNetConfig, params: CapsNetParams<T>) -> Result<Self> {
        config.validate()?;
        let expected = CapsNetParams::<T>::zeros(&config);
        for ((name, want), (_, got)) in expected.named().iter().zip(params.named()) {
            if want.shape() != got.shape() {
                return Err(Error::Config(format!(
                    "{name}: expected shape {:?}, got {:?}",
                    want.shape(),
                    got.shape()
                )));
            }
        }
        if expected.decoder.len() != params.decoder.len() {
            return Err(Error::Config("decoder depth does not match config".into()));
        }
        Ok(CapsNet { config, params })
    }

    pub fn zeros(config: CapsNetConfig) -> Result<Self> {
        config.validate()?;
        let params = CapsNetParams::zeros(&config);
        Ok(CapsNet { config, params })
    }

    /// Records every parameter as a leaf; `trainable` leaves receive gradients.
    pub fn bind(&self, g: &mut Graph<T>, trainable: bool) -> BoundCapsNet {
        let mut leaf = |t: &Tensor<T>| if trainable { g.param(t.clone()) } else { g.constant(t.clone()) };
        let p = &self.params;
        let conv1 = (leaf(&p.conv1.weight), leaf(&p.conv1.bias));
        let primary = (leaf(&p.primary.weight), leaf(&p.primary.bias));
        let routing_weight = leaf(&p.routing_weight);
        let decoder = p.decoder.iter().map(|l| (leaf(&l.weight), leaf(&l.bias))).collect();
        BoundCapsNet {
            conv1,
            primary,
            routing_weight,
            decoder,
        }
    }

    pub fn check_input(&self, shape: &[usize]) -> Result<()> {
        let c = &self.config;
        let want = [c.input_channels, c.input_hw[0], c.input_hw[1]];
        if shape.len() != 4 || shape[1..] != want {
            return Err(Error::dim(
                "capsnet",
                format!("images must be [N,{},{},{}], got {shape:?}", want[0], want[1], want[2]),
            ));
        }
        Ok(())
    }

    /// Conv1 (ReLU) → PrimaryCaps → squash → prediction vectors → routing.
    pub fn forward(&self, g: &mut Graph<T>, p: &BoundCapsNet, images: Var) -> Result<CapsForward> {
        self.check_input(g.shape(images))?;
        let c = &self.config;
        let h = g.conv2d(images, p.conv1.0, p.conv1.1, 1)?;
        let h = g.relu(h)?;
        let prim = g.conv2d(h, p.primary.0, p.primary.1, c.primary_stride)?;
        let caps = g.to_capsules(prim, c.primary_caps_dim)?;
        let caps = g.squash(caps)?;
        let uhat = g.predict_vectors(caps, p.routing_weight)?;
        let (digit_caps, routing) = route_on_graph(g, uhat, c.routing_iterations)?;
        let norms = g.capsule_norms(digit_caps)?;
        Ok(CapsForward {
            digit_caps,
            norms,
            routing,
        })
    }

    /// dense → ReLU → … → dense → sigmoid over a `[N, classes·dim]` embedding.
    pub fn decode(&self, g: &mut Graph<T>, p: &BoundCapsNet, masked: Var) -> Result<Var> {
        let mut x = masked;
        let last = p.decoder.len() - 1;
        for (k, &(w, b)) in p.decoder.iter().enumerate() {
            x = g.dense(x, w, b)?;
            x = if k == last { g.sigmoid(x)? } else { g.relu(x)? };
        }
        Ok(x)
    }

    pub fn reconstruct(&self, g: &mut Graph<T>, p: &BoundCapsNet, digit_caps: Var, select: &[MaskSelect]) -> Result<Var> {
        let masked = g.mask(digit_caps, select)?;
        self.decode(g, p, masked)
    }

    /// Margin loss plus the weighted reconstruction error, with the decoder
    /// masked by the ground-truth labels.
    pub fn objective(
        &self,
        g: &mut Graph<T>,
        p: &BoundCapsNet,
        images: &Tensor<T>,
        labels: &[usize],
        loss: &LossConfig,
    ) -> Result<CapsObjective> {
        let x = g.constant(images.clone());
        let forward = self.forward(g, p, x)?;
        let margin = g.margin_loss(forward.norms, labels, loss.margin())?;
        let select: Vec<MaskSelect> = labels.iter().map(|&l| MaskSelect::Class(l)).collect();
        let recon = self.reconstruct(g, p, forward.digit_caps, &select)?;
        let n = images.shape()[0];
        let target = images.clone().reshape([n, self.config.image_len()])?;
        let sse = g.sum_squared_error(recon, &target)?;
        let reconstruction = g.scale(sse, loss.recon_weight)?;
        let total = g.add(margin, reconstruction)?;
        Ok(CapsObjective {
            total,
            margin,
            reconstruction,
            forward,
        })
    }

    /// Forward pass without gradients; predictions are the longest capsules.
    pub fn infer(&self, images: &Tensor<T>) -> Result<CapsInference<T>> {
        let mut g = Graph::new();
        let p = self.bind(&mut g, false);
        let x = g.constant(images.clone());
        let out = self.forward(&mut g, &p, x)?;
        let norms = g.value(out.norms).clone();
        let predictions = predictions(&norms);
        Ok(CapsInference {
            digit_caps: g.value(out.digit_caps).clone(),
            routing: out.routing.state(&g),
            norms,
            predictions,
        })
    }

    /// Decodes already-masked embeddings `[N, classes·dim]` to flattened images.
    pub fn decode_embeddings(&self, masked: &Tensor<T>) -> Result<Tensor<T>> {
        let s = masked.shape();
        if s.len() != 2 || s[1] != self.config.embedding_len() {
            return Err(Error::dim(
                "decode",
                format!("embedding must be [N,{}], got {s:?}", self.config.embedding_len()),
            ));
        }
        let mut g = Graph::new();
        let p = self.bind(&mut g, false);
        let x = g.constant(masked.clone());
        let y = self.decode(&mut g, &p, x)?;
        Ok(g.value(y).clone())
    }
}

/// Index of the largest element; the lowest index wins ties.
pub fn argmax<T: Real>(row: &[T]) -> usize {
    let mut best = 0;
    for (k, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = k;
        }
    }
    best
}

/// Row-wise [`argmax`] of a `[N, classes]` tensor.
pub fn predictions<T: Real>(scores: &Tensor<T>) -> Vec<usize> {
    let classes = scores.shape().get(1).copied().unwrap_or(1).max(1);
    scores.data().chunks_exact(classes).map(argmax).collect()
}

/// Flattens `[N, classes, dim]` capsules to `[N, classes·dim]`, zeroing all
/// but the selected class section of each sample.
pub fn mask_embedding<T: Real>(digit_caps: &Tensor<T>, select: &[MaskSelect]) -> Result<Tensor<T>> {
    let mut g = Graph::new();
    let x = g.constant(digit_caps.clone());
    let y = g.mask(x, select)?;
    Ok(g.value(y).clone())
}

/// `û[i, j, :] = u[i, :] · W[i, j, :, :]` for a single sample `u: [in, in_dim]`.
pub fn predict_vectors<T: Real>(u: &Tensor<T>, w: &Tensor<T>) -> Result<Tensor<T>> {
    let s = u.shape();
    if s.len() != 2 {
        return Err(Error::dim("predict_vectors", format!("u must be [in,in_dim], got {s:?}")));
    }
    let batched = u.clone().reshape([1, s[0], s[1]])?;
    let out = crate::kernels::predict_vectors_batched(&batched, w)?;
    let shape = out.shape()[1..].to_vec();
    out.reshape(shape)
}
