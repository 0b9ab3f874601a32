//! Decoder probes: reconstructions, single-component perturbation sweeps and
//! per-class unmasking of confident mistakes.

use alloc::format;
use alloc::vec::Vec;

use super::grid::ImageGrid;
use crate::capsule::{mask_embedding, CapsNet, MaskSelect};
use crate::data::LabeledDataset;
use crate::{Error, Real, Result, Tensor};

/// Number of substituted values per component.
pub const PERTURB_COLUMNS: usize = 11;

/// `−0.25, −0.20, …, 0.25`.
pub fn perturbation_values() -> [f64; PERTURB_COLUMNS] {
    core::array::from_fn(|k| (k as f64 - 5.0) * 0.05)
}

fn to_images<T: Real>(flat: Tensor<T>, shape: [usize; 3]) -> Result<Tensor<T>> {
    let n = flat.shape()[0];
    flat.reshape([n, shape[0], shape[1], shape[2]])
}

fn image_shape<T: Real>(net: &CapsNet<T>) -> [usize; 3] {
    let c = &net.config;
    [c.input_channels, c.input_hw[0], c.input_hw[1]]
}

/// Decodes each image through its predicted class; returns images
/// `[N, C, H, W]` and the predictions.
pub fn reconstructions<T: Real>(net: &CapsNet<T>, images: &Tensor<T>) -> Result<(Tensor<T>, Vec<usize>)> {
    let inf = net.infer(images)?;
    let select: Vec<MaskSelect> = inf.predictions.iter().map(|&p| MaskSelect::Class(p)).collect();
    let flat = net.decode_embeddings(&mask_embedding(&inf.digit_caps, &select)?)?;
    Ok((to_images(flat, image_shape(net))?, inf.predictions))
}

/// Decoder outputs for one sample with single components of the winning
/// capsule overwritten.
#[derive(Clone, Debug)]
pub struct Perturbation<T> {
    pub predicted: usize,
    /// The winning capsule as computed, `[dim]`.
    pub capsule: Vec<T>,
    /// Reconstruction without any substitution, `[C, H, W]`.
    pub base: Tensor<T>,
    /// `dim × 11` cells; row `i` substitutes component `i`, column `k` uses
    /// value `k` of [`perturbation_values`].
    pub cells: Vec<Tensor<T>>,
}

impl<T: Real> Perturbation<T> {
    pub fn grid(&self) -> Result<ImageGrid<T>> {
        ImageGrid::new(self.capsule.len(), PERTURB_COLUMNS, self.cells.clone())
    }
}

/// Decodes `embeddings` (each `[classes·dim]`) in one batch as `[C,H,W]` cells.
fn decode_rows<T: Real>(net: &CapsNet<T>, embeddings: Vec<T>, count: usize) -> Result<Vec<Tensor<T>>> {
    let width = net.config.embedding_len();
    let flat = net.decode_embeddings(&Tensor::new([count, width], embeddings)?)?;
    let shape = image_shape(net);
    Ok((0..count)
        .map(|i| Tensor::new(shape, flat.outer(i).to_vec()).expect("decoder width"))
        .collect())
}

/// Sweeps every component of the winning capsule of `image` (`[C, H, W]`)
/// through [`perturbation_values`], keeping the others fixed.
pub fn perturbation_grid<T: Real>(net: &CapsNet<T>, image: &Tensor<T>) -> Result<Perturbation<T>> {
    perturb_with(net, image, |_, _| None)
}

/// Like [`perturbation_grid`], but `value(component, column)` may override
/// the substituted value; used to check that substituting a component's own
/// value is a no-op.
pub(crate) fn perturb_with<T: Real>(
    net: &CapsNet<T>,
    image: &Tensor<T>,
    value: impl Fn(usize, usize) -> Option<T>,
) -> Result<Perturbation<T>> {
    let s = image.shape();
    if s.len() != 3 {
        return Err(Error::dim("perturbation", format!("image must be [C,H,W], got {s:?}")));
    }
    let batch = image.clone().reshape([1, s[0], s[1], s[2]])?;
    let inf = net.infer(&batch)?;
    let predicted = inf.predictions[0];
    let masked = mask_embedding(&inf.digit_caps, &[MaskSelect::Class(predicted)])?;
    let dim = net.config.digit_caps_dim;
    let offset = predicted * dim;
    let capsule = masked.data()[offset..offset + dim].to_vec();
    let values = perturbation_values();
    let mut rows = Vec::with_capacity((dim * PERTURB_COLUMNS + 1) * masked.len());
    rows.extend_from_slice(masked.data());
    for i in 0..dim {
        for (k, &v) in values.iter().enumerate() {
            let mut e = masked.data().to_vec();
            e[offset + i] = value(i, k).unwrap_or(T::lit(v));
            rows.extend(e);
        }
    }
    let mut cells = decode_rows(net, rows, dim * PERTURB_COLUMNS + 1)?;
    let base = cells.remove(0);
    Ok(Perturbation {
        predicted,
        capsule,
        base,
        cells,
    })
}

/// A misclassified sample with one reconstruction per class section.
#[derive(Clone, Debug)]
pub struct ErrorCase<T> {
    pub index: usize,
    pub truth: usize,
    pub predicted: usize,
    /// Length of the winning capsule.
    pub confidence: T,
    pub image: Tensor<T>,
    /// Reconstruction `j` keeps only class section `j`.
    pub recons: Vec<Tensor<T>>,
}

/// The `k` misclassifications with the longest winning capsule, most
/// confident first (ties by index). Returns fewer when fewer exist.
pub fn error_cases<T: Real>(
    net: &CapsNet<T>,
    ds: &LabeledDataset<T>,
    k: usize,
    batch_size: usize,
) -> Result<Vec<ErrorCase<T>>> {
    let mut wrong: Vec<(usize, usize, T, Tensor<T>)> = Vec::new();
    let idx: Vec<usize> = (0..ds.len()).collect();
    for chunk in idx.chunks(batch_size.max(1)) {
        let (images, labels) = ds.gather(chunk);
        let inf = net.infer(&images)?;
        let classes = net.config.digit_caps_count;
        for (b, (&i, &truth)) in chunk.iter().zip(&labels).enumerate() {
            let p = inf.predictions[b];
            if p != truth {
                let conf = inf.norms.data()[b * classes + p];
                let caps = Tensor::new(
                    [1, classes, net.config.digit_caps_dim],
                    inf.digit_caps.outer(b).to_vec(),
                )?;
                wrong.push((i, p, conf, caps));
            }
        }
    }
    wrong.sort_by(|a, b| b.2.partial_cmp(&a.2).unwrap_or(core::cmp::Ordering::Equal).then(a.0.cmp(&b.0)));
    wrong.truncate(k);
    let classes = net.config.digit_caps_count;
    let mut out = Vec::with_capacity(wrong.len());
    for (index, predicted, confidence, caps) in wrong {
        let mut rows = Vec::with_capacity(classes * net.config.embedding_len());
        for j in 0..classes {
            rows.extend_from_slice(mask_embedding(&caps, &[MaskSelect::Class(j)])?.data());
        }
        out.push(ErrorCase {
            index,
            truth: ds.labels()[index],
            predicted,
            confidence,
            image: ds.image(index),
            recons: decode_rows(net, rows, classes)?,
        });
    }
    Ok(out)
}
