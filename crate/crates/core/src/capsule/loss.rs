//! Plain-tensor versions of the two loss terms.

use alloc::format;

use super::config::LossConfig;
use crate::autodiff::Graph;
use crate::{Error, Real, Result, Tensor};

/// Margin loss of capsule lengths `[N, classes]`, averaged over the batch.
pub fn margin_loss<T: Real>(norms: &Tensor<T>, labels: &[usize], cfg: &LossConfig) -> Result<T> {
    let mut g = Graph::new();
    let n = g.constant(norms.clone());
    let l = g.margin_loss(n, labels, cfg.margin())?;
    Ok(g.value(l).data()[0])
}

/// Batch-mean sum of squared errors, multiplied by `cfg.recon_weight`.
pub fn reconstruction_loss<T: Real>(recon: &Tensor<T>, target: &Tensor<T>, cfg: &LossConfig) -> Result<T> {
    if recon.shape() != target.shape() {
        return Err(Error::dim(
            "reconstruction_loss",
            format!("reconstruction {:?} vs target {:?}", recon.shape(), target.shape()),
        ));
    }
    let mut g = Graph::new();
    let r = g.constant(recon.clone());
    let sse = g.sum_squared_error(r, target)?;
    let w = g.scale(sse, cfg.recon_weight)?;
    Ok(g.value(w).data()[0])
}
