//! CapsNet: Conv1 → PrimaryCaps → routing → DigitCaps, the masked
//! reconstruction decoder, and the margin and reconstruction losses.

mod config;
mod loss;
mod model;
mod routing;

pub use config::{CapsNetConfig, LossConfig};
pub use loss::{margin_loss, reconstruction_loss};
pub use model::{
    argmax, mask_embedding, predict_vectors, predictions, BoundCapsNet, CapsForward, CapsInference, CapsNet,
    CapsNetParams, CapsObjective,
};
pub use routing::{route, route_on_graph, IterationVars, RoutingIteration, RoutingState, RoutingTrace};

pub use crate::autodiff::MaskSelect;
pub use crate::kernels::squash;

#[cfg(test)]
mod tests;
