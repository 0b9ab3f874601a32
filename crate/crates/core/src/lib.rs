//! Capsule-network engine without the standard library.
//!
//! Everything in this crate is pure computation over heap-allocated buffers:
//!
//! * [`tensor`] and [`autodiff`]: dense row-major tensors and a tape that
//!   records operations for reverse-mode differentiation.
//! * [`capsule`]: squash, prediction vectors, routing by agreement, the
//!   Conv1 → PrimaryCaps → DigitCaps stack, masking, the reconstruction
//!   decoder and both loss terms.
//! * [`cnn`]: the small convolutional baseline.
//! * [`data`]: labelled datasets, seeded random streams, batching and the
//!   random affine deformation.
//! * [`optim`] and [`train`]: parameter initialisation, Adam/SGD and single
//!   optimisation steps, evaluation and confusion matrices.
//! * [`analysis`]: image grids, perturbation sweeps, error cases, embedding
//!   rows and a Jacobi-based PCA.
//!
//! File formats, the epoch loop and the command line live in the companion
//! `capsforge` crate.

#![no_std]

extern crate alloc;

pub mod analysis;
pub mod autodiff;
pub mod capsule;
pub mod cnn;
pub mod data;
mod error;
mod gemm;
pub mod kernels;
pub mod optim;
pub mod params;
mod scalar;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use scalar::{DType, Real};
pub use tensor::Tensor;
