//! Initialisation, single optimisation steps and evaluation for both
//! architectures. The epoch loop itself lives in the `capsforge` crate.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::autodiff::Graph;
use crate::capsule::{predictions, CapsNet, CapsNetConfig, LossConfig};
use crate::cnn::{Cnn, CnnConfig};
use crate::data::{stream, LabeledDataset, Stream};
use crate::optim::Optimizer;
use crate::params::Parameters;
use crate::{Error, Real, Result, Tensor};

/// Standard deviation of the routing transformation matrices at init.
pub const ROUTING_INIT_STD: f64 = 0.01;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Arch {
    CapsNet,
    Cnn,
}

impl Arch {
    pub fn as_str(self) -> &'static str {
        match self {
            Arch::CapsNet => "capsnet",
            Arch::Cnn => "cnn",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "arch", rename_all = "lowercase"))]
pub enum ModelConfig {
    CapsNet { net: CapsNetConfig, loss: LossConfig },
    Cnn { net: CnnConfig },
}

impl ModelConfig {
    pub fn arch(&self) -> Arch {
        match self {
            ModelConfig::CapsNet { .. } => Arch::CapsNet,
            ModelConfig::Cnn { .. } => Arch::Cnn,
        }
    }

    /// `[C, H, W]` of the expected input.
    pub fn input_shape(&self) -> [usize; 3] {
        match self {
            ModelConfig::CapsNet { net, .. } => [net.input_channels, net.input_hw[0], net.input_hw[1]],
            ModelConfig::Cnn { net } => [net.input_channels, net.input_hw[0], net.input_hw[1]],
        }
    }

    pub fn num_classes(&self) -> usize {
        match self {
            ModelConfig::CapsNet { net, .. } => net.digit_caps_count,
            ModelConfig::Cnn { net } => net.num_classes,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ModelConfig::CapsNet { net, loss } => {
                net.validate()?;
                loss.validate()
            }
            ModelConfig::Cnn { net } => net.validate(),
        }
    }
}

/// Either architecture with its parameters.
#[derive(Clone, Debug, PartialEq)]
pub enum Model<T> {
    CapsNet { net: CapsNet<T>, loss: LossConfig },
    Cnn(Cnn<T>),
}

fn glorot<T: Real>(t: &mut Tensor<T>, rng: &mut ChaCha8Rng) {
    let s = t.shape();
    let (fan_in, fan_out) = match s.len() {
        // dense [in, out]
        2 => (s[0], s[1]),
        // conv [F, C, kh, kw]
        4 => (s[1] * s[2] * s[3], s[0] * s[2] * s[3]),
        _ => unreachable!("glorot init on a {}-d tensor", s.len()),
    };
    let a = num_traits::Float::sqrt(6.0 / (fan_in + fan_out) as f64);
    for w in t.data_mut() {
        *w = T::lit(rng.random_range(-a..a));
    }
}

impl<T: Real> Model<T> {
    /// Glorot-uniform conv and dense weights, zero biases, `Normal(0, 0.01)`
    /// routing matrices, all drawn from the init stream of `seed` in
    /// parameter order.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = stream(seed, Stream::Init);
        let mut model = Self::zeros(config)?;
        let normal = Normal::new(0.0, ROUTING_INIT_STD).expect("positive std");
        let names: Vec<String> = model.named().into_iter().map(|(n, _)| n).collect();
        for (name, t) in names.iter().zip(model.tensors_mut()) {
            if name.ends_with(".bias") {
                continue;
            } else if name == "digit.routing_weight" {
                for w in t.data_mut() {
                    *w = T::lit(normal.sample(&mut rng));
                }
            } else {
                glorot(t, &mut rng);
            }
        }
        Ok(model)
    }

    pub fn zeros(config: &ModelConfig) -> Result<Self> {
        Ok(match config {
            ModelConfig::CapsNet { net, loss } => Model::CapsNet {
                net: CapsNet::zeros(net.clone())?,
                loss: *loss,
            },
            ModelConfig::Cnn { net } => Model::Cnn(Cnn::zeros(net.clone())?),
        })
    }

    pub fn config(&self) -> ModelConfig {
        match self {
            Model::CapsNet { net, loss } => ModelConfig::CapsNet {
                net: net.config.clone(),
                loss: *loss,
            },
            Model::Cnn(c) => ModelConfig::Cnn { net: c.config.clone() },
        }
    }

    pub fn arch(&self) -> Arch {
        match self {
            Model::CapsNet { .. } => Arch::CapsNet,
            Model::Cnn(_) => Arch::Cnn,
        }
    }

    pub fn named(&self) -> Vec<(String, &Tensor<T>)> {
        match self {
            Model::CapsNet { net, .. } => net.params.named(),
            Model::Cnn(c) => c.params.named(),
        }
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        match self {
            Model::CapsNet { net, .. } => net.params.tensors_mut(),
            Model::Cnn(c) => c.params.tensors_mut(),
        }
    }

    pub fn assign_named(&mut self, items: Vec<(String, Tensor<T>)>) -> Result<()> {
        match self {
            Model::CapsNet { net, .. } => net.params.assign_named(items),
            Model::Cnn(c) => c.params.assign_named(items),
        }
    }

    pub fn first_non_finite(&self) -> Option<String> {
        match self {
            Model::CapsNet { net, .. } => net.params.first_non_finite(),
            Model::Cnn(c) => c.params.first_non_finite(),
        }
    }

    /// Class scores `[N, classes]`: capsule lengths or CNN logits.
    pub fn scores(&self, images: &Tensor<T>) -> Result<Tensor<T>> {
        match self {
            Model::CapsNet { net, .. } => Ok(net.infer(images)?.norms),
            Model::Cnn(c) => c.logits(images),
        }
    }

    /// Loss, predictions and (optionally) gradients for one batch.
    pub fn batch(&self, images: &Tensor<T>, labels: &[usize], opts: BatchOptions) -> Result<BatchResult<T>> {
        let mut g = Graph::new();
        let (loss, margin, scores, vars) = match self {
            Model::CapsNet { net, loss } => {
                let p = net.bind(&mut g, opts.gradients);
                let obj = net.objective(&mut g, &p, images, labels, loss)?;
                if let Some(tol) = opts.routing_tolerance {
                    obj.forward
                        .routing
                        .check_invariants(&g, tol)
                        .map_err(|detail| Error::Contract { op: "routing", detail })?;
                }
                (obj.total, Some(obj.margin), obj.forward.norms, p.vars())
            }
            Model::Cnn(c) => {
                let p = c.bind(&mut g, opts.gradients);
                let (loss, logits) = c.objective(&mut g, &p, images, labels)?;
                (loss, None, logits, p.vars())
            }
        };
        let result_loss = g.value(loss).data()[0];
        let margin = margin.map(|m| g.value(m).data()[0]);
        let predicted = predictions(g.value(scores));
        let grads = if opts.gradients {
            let mut grads = g.backward(loss)?;
            vars.iter()
                .map(|&v| grads.take(v).expect("every parameter is a leaf"))
                .collect()
        } else {
            Vec::new()
        };
        Ok(BatchResult {
            loss: result_loss,
            margin,
            predictions: predicted,
            grads,
        })
    }

    /// One optimiser step on a batch. Fails, naming the tensor, if any
    /// parameter stops being finite.
    pub fn train_step(
        &mut self,
        optimizer: &mut Optimizer<T>,
        images: &Tensor<T>,
        labels: &[usize],
        routing_tolerance: Option<f64>,
    ) -> Result<BatchResult<T>> {
        let out = self.batch(
            images,
            labels,
            BatchOptions {
                gradients: true,
                routing_tolerance,
            },
        )?;
        optimizer.step(self.tensors_mut(), &out.grads)?;
        if let Some(name) = self.first_non_finite() {
            return Err(Error::contract(
                "train_step",
                format!("parameter {name} became non-finite after step {}", optimizer.steps()),
            ));
        }
        Ok(out)
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct BatchOptions {
    pub gradients: bool,
    /// Check routing invariants with this tolerance (CapsNet only).
    pub routing_tolerance: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct BatchResult<T> {
    /// Batch-mean total loss.
    pub loss: T,
    /// Batch-mean margin loss (CapsNet only).
    pub margin: Option<T>,
    pub predictions: Vec<usize>,
    /// Gradients in parameter order; empty unless requested.
    pub grads: Vec<Tensor<T>>,
}

impl<T> BatchResult<T> {
    pub fn correct(&self, labels: &[usize]) -> usize {
        self.predictions.iter().zip(labels).filter(|(p, l)| p == l).count()
    }
}

/// `counts[true][predicted]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        ConfusionMatrix {
            classes,
            counts: vec![0; classes * classes],
        }
    }

    pub fn record(&mut self, truth: usize, predicted: usize) {
        self.counts[truth * self.classes + predicted] += 1;
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth * self.classes + predicted]
    }

    pub fn row(&self, truth: usize) -> &[u64] {
        &self.counts[truth * self.classes..(truth + 1) * self.classes]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn correct(&self) -> u64 {
        (0..self.classes).map(|k| self.get(k, k)).sum()
    }

    /// Zero for an empty matrix.
    pub fn accuracy(&self) -> f64 {
        match self.total() {
            0 => 0.0,
            n => self.correct() as f64 / n as f64,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Evaluation {
    /// Sample-weighted mean loss.
    pub loss: f64,
    pub accuracy: f64,
    pub confusion: ConfusionMatrix,
    pub predictions: Vec<usize>,
}

/// Loss, accuracy and confusion matrix over a whole dataset, in batches of
/// `batch_size` in index order.
pub fn evaluate<T: Real>(model: &Model<T>, ds: &LabeledDataset<T>, batch_size: usize) -> Result<Evaluation> {
    let want = model.config().input_shape();
    if ds.image_shape() != want || ds.num_classes() != model.config().num_classes() {
        return Err(Error::dim(
            "evaluate",
            format!(
                "model expects {want:?} images and {} classes, dataset has {:?} and {}",
                model.config().num_classes(),
                ds.image_shape(),
                ds.num_classes()
            ),
        ));
    }
    if batch_size == 0 {
        return Err(Error::contract("evaluate", "batch size must be at least 1"));
    }
    let mut confusion = ConfusionMatrix::new(ds.num_classes());
    let mut loss_sum = 0.0;
    let mut all = Vec::with_capacity(ds.len());
    let idx: Vec<usize> = (0..ds.len()).collect();
    for chunk in idx.chunks(batch_size) {
        let (images, labels) = ds.gather(chunk);
        let out = model.batch(&images, &labels, BatchOptions::default())?;
        loss_sum += out.loss.as_f64() * chunk.len() as f64;
        for (&t, &p) in labels.iter().zip(&out.predictions) {
            confusion.record(t, p);
        }
        all.extend(out.predictions);
    }
    Ok(Evaluation {
        loss: if ds.is_empty() { 0.0 } else { loss_sum / ds.len() as f64 },
        accuracy: confusion.accuracy(),
        confusion,
        predictions: all,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Split;
    use crate::optim::OptimizerConfig;

    fn caps_config(net: CapsNetConfig) -> ModelConfig {
        ModelConfig::CapsNet {
            net,
            loss: LossConfig::default(),
        }
    }

    #[test]
    fn init_is_seeded_with_zero_biases() {
        let cfg = caps_config(CapsNetConfig::tiny());
        let a = Model::<f32>::init(&cfg, 3).unwrap();
        let b = Model::<f32>::init(&cfg, 3).unwrap();
        let c = Model::<f32>::init(&cfg, 4).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        for (name, t) in a.named() {
            if name.ends_with(".bias") {
                assert!(t.data().iter().all(|&x| x == 0.0), "{name}");
            } else {
                assert!(t.data().iter().any(|&x| x != 0.0), "{name}");
            }
        }
        let cnn = ModelConfig::Cnn {
            net: CnnConfig::baseline(1, 28, 10),
        };
        let m = Model::<f32>::init(&cnn, 1).unwrap();
        // first block: fan_in 9, fan_out 288
        let bound = (6.0f32 / 297.0).sqrt();
        assert!(m.named()[0].1.data().iter().all(|&x| x.abs() < bound));
    }

    #[test]
    fn routing_weight_std_is_close_to_target() {
        let mut net = CapsNetConfig::mnist();
        net.conv1_maps = 2;
        net.primary_caps_types = 3;
        net.decoder_widths = vec![2, 2, 784];
        let m = Model::<f64>::init(&caps_config(net), 42).unwrap();
        let w = m.named().into_iter().find(|(n, _)| n == "digit.routing_weight").unwrap().1;
        assert!(w.len() >= 100_000);
        let n = w.len() as f64;
        let mean = w.data().iter().sum::<f64>() / n;
        let std = (w.data().iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n).sqrt();
        assert!((std - ROUTING_INIT_STD).abs() < 0.1 * ROUTING_INIT_STD, "{std}");
    }

    #[test]
    fn confusion_bookkeeping() {
        let mut c = ConfusionMatrix::new(3);
        for (t, p) in [(0, 0), (0, 1), (2, 2), (1, 1), (2, 0)] {
            c.record(t, p);
        }
        assert_eq!(c.total(), 5);
        assert_eq!(c.row(0), &[1, 1, 0]);
        assert_eq!(c.correct(), 3);
        assert!((c.accuracy() - 0.6).abs() < 1e-12);
        assert_eq!(ConfusionMatrix::new(2).accuracy(), 0.0);
    }

    fn synthetic(n: usize, classes: usize, hw: usize, seed: u64) -> LabeledDataset<f32> {
        let mut rng = stream(seed, Stream::Shuffle);
        let images = Tensor::from_fn([n, 1, hw, hw], |_| rng.random_range(0.0..1.0f32));
        let labels = (0..n).map(|i| i % classes).collect();
        LabeledDataset::new(images, labels, classes, "synthetic", Split::Test).unwrap()
    }

    #[test]
    fn random_model_on_balanced_labels_is_near_chance() {
        let mut net = CapsNetConfig::tiny();
        net.digit_caps_count = 10;
        let model = Model::<f32>::init(&caps_config(net), 5).unwrap();
        let ds = synthetic(1000, 10, 12, 1);
        let ev = evaluate(&model, &ds, 100).unwrap();
        assert_eq!(ev.confusion.total(), 1000);
        for k in 0..10 {
            assert_eq!(ev.confusion.row(k).iter().sum::<u64>(), 100);
        }
        assert!((ev.accuracy - 0.1).abs() <= 0.05, "{}", ev.accuracy);
    }

    #[test]
    fn evaluate_rejects_wrong_shapes() {
        let model = Model::<f32>::init(&caps_config(CapsNetConfig::tiny()), 5).unwrap();
        let ds = synthetic(4, 2, 10, 1);
        assert!(matches!(evaluate(&model, &ds, 2), Err(Error::Dimension { .. })));
    }

    #[test]
    fn tiny_capsnet_memorises_eight_samples() {
        let cfg = caps_config(CapsNetConfig::tiny());
        let mut model = Model::<f32>::init(&cfg, 42).unwrap();
        let ds = synthetic(8, 2, 12, 2);
        let mut opt = Optimizer::new(OptimizerConfig {
            learning_rate: 1e-2,
            ..Default::default()
        })
        .unwrap();
        let (images, labels) = ds.gather(&(0..8).collect::<Vec<_>>());
        let mut last = None;
        for _ in 0..200 {
            let out = model.train_step(&mut opt, &images, &labels, Some(1e-6)).unwrap();
            assert!(out.loss.is_finite());
            last = Some(out);
        }
        let after = model.batch(&images, &labels, BatchOptions::default()).unwrap();
        assert_eq!(after.correct(&labels), 8);
        assert!(after.margin.unwrap() < 0.01, "{:?} {:?}", after.margin, last.map(|l| l.loss));
        assert_eq!(evaluate(&model, &ds, 3).unwrap().accuracy, 1.0);
    }

    #[test]
    fn non_finite_parameters_are_reported_by_name() {
        let cfg = caps_config(CapsNetConfig::tiny());
        let mut model = Model::<f32>::init(&cfg, 1).unwrap();
        let ds = synthetic(2, 2, 12, 2);
        let mut opt = Optimizer::new(OptimizerConfig {
            learning_rate: f32::MAX as f64,
            kind: crate::optim::OptimizerKind::Sgd,
            ..Default::default()
        })
        .unwrap();
        let (images, labels) = ds.gather(&[0, 1]);
        let mut err = None;
        for _ in 0..5 {
            if let Err(e) = model.train_step(&mut opt, &images, &labels, None) {
                err = Some(e);
                break;
            }
        }
        let msg = format!("{}", err.expect("training must fail"));
        assert!(msg.contains("non-finite") || msg.contains("NaN") || msg.contains("inf"), "{msg}");
    }
}
