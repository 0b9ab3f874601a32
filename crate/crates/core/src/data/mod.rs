//! Labelled image sets, seeded random streams, batching and the random affine
//! deformation used for robustness tests.

mod affine;
mod dataset;
mod rng;

pub use affine::{apply_affine, deform_dataset, sample_affine, AffineRanges, AffineSpec};
pub use dataset::{LabeledDataset, Split};
pub use rng::{batches, stream, substream, Stream};
