//! File formats, the training loop, figure exports and the command line
//! around [`capsforge_core`].

pub mod checkpoint;
pub mod cifar;
pub mod cli;
pub mod config;
pub mod datasets;
mod error;
pub mod export;
pub mod idx;
pub mod manifest;
pub mod pnm;
pub mod trainer;

pub use error::{Error, Result};
