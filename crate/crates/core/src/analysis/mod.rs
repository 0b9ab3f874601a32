//! Read-only analyses of a trained CapsNet: image grids, reconstructions,
//! perturbation sweeps, confident errors, embedding rows and PCA.

mod embed;
mod grid;
mod pca;
mod probe;

pub use embed::{embedding_rows, EmbeddingRow};
pub use grid::{grid_layout, ImageGrid};
pub use pca::{jacobi_eigen, pca_project, Pca, SymmetricEigen};
pub use probe::{
    error_cases, perturbation_grid, perturbation_values, reconstructions, ErrorCase, Perturbation, PERTURB_COLUMNS,
};
