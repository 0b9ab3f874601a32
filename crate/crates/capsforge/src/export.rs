//! Figure and table artifacts: PGM/PPM grids, embedding and PCA TSVs and
//! confusion matrices.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use capsforge_core::analysis::{
    embedding_rows, error_cases, pca_project, perturbation_grid, reconstructions, EmbeddingRow, ImageGrid, Pca,
};
use capsforge_core::capsule::CapsNet;
use capsforge_core::data::{deform_dataset, LabeledDataset};
use capsforge_core::train::ConfusionMatrix;
use capsforge_core::Tensor;

use crate::error::{write_atomic, Error, Result};
use crate::pnm::write_image;

const BATCH: usize = 100;

fn first_n(ds: &LabeledDataset<f32>, n: usize) -> Result<LabeledDataset<f32>> {
    if n > ds.len() {
        return Err(Error::Incompatible(format!("asked for {n} samples, dataset has {}", ds.len())));
    }
    Ok(ds.take(n))
}

fn cells(images: &Tensor<f32>) -> Vec<Tensor<f32>> {
    let s = images.shape();
    (0..s[0])
        .map(|i| Tensor::new([s[1], s[2], s[3]], images.outer(i).to_vec()).expect("image shape"))
        .collect()
}

fn write_grid(path: &Path, grid: &ImageGrid<f32>) -> Result<()> {
    write_image(path, &grid.render())
}

/// Grids of the first `n` images decoded by the early and the final model,
/// and of the images themselves. Returns the three paths in that order.
pub fn export_reconstructions(
    early: &CapsNet<f32>,
    early_tag: &str,
    last: &CapsNet<f32>,
    ds: &LabeledDataset<f32>,
    n: usize,
    dir: &Path,
) -> Result<[PathBuf; 3]> {
    let sub = first_n(ds, n)?;
    let paths = [
        dir.join(format!("reconstructions-{early_tag}.pgm")),
        dir.join("reconstructions-final.pgm"),
        dir.join("ground-truth.pgm"),
    ]
    .map(|p| with_ext(p, ds));
    let mut early_cells = Vec::with_capacity(n);
    let mut last_cells = Vec::with_capacity(n);
    let idx: Vec<usize> = (0..n).collect();
    for chunk in idx.chunks(BATCH) {
        let (images, _) = sub.gather(chunk);
        early_cells.extend(cells(&reconstructions(early, &images)?.0));
        last_cells.extend(cells(&reconstructions(last, &images)?.0));
    }
    write_grid(&paths[0], &ImageGrid::square(early_cells)?)?;
    write_grid(&paths[1], &ImageGrid::square(last_cells)?)?;
    write_grid(&paths[2], &ImageGrid::square(cells(sub.images()))?)?;
    Ok(paths)
}

/// PGM for grayscale data, PPM for colour.
fn with_ext(p: PathBuf, ds: &LabeledDataset<f32>) -> PathBuf {
    if ds.image_shape()[0] == 3 {
        p.with_extension("ppm")
    } else {
        p
    }
}

/// `dim × 11` sweep grid for sample `index`.
pub fn export_perturbation(net: &CapsNet<f32>, ds: &LabeledDataset<f32>, index: usize, dir: &Path) -> Result<PathBuf> {
    if index >= ds.len() {
        return Err(Error::Incompatible(format!("sample {index} outside a dataset of {}", ds.len())));
    }
    let p = perturbation_grid(net, &ds.image(index))?;
    log::info!(
        "sample {index}: label {}, predicted {}",
        ds.labels()[index],
        p.predicted
    );
    let path = with_ext(dir.join(format!("perturb-{index}.pgm")), ds);
    write_grid(&path, &p.grid()?)?;
    Ok(path)
}

/// The `k` most confident mistakes: one grid row per case holding the input
/// and one reconstruction per class section, plus a TSV index.
pub fn export_error_cases(net: &CapsNet<f32>, ds: &LabeledDataset<f32>, k: usize, dir: &Path) -> Result<(PathBuf, usize)> {
    let cases = error_cases(net, ds, k, BATCH)?;
    if cases.len() < k {
        log::warn!("only {} misclassified samples, fewer than the requested {k}", cases.len());
    }
    let mut table = String::from("rank\tindex\ttrue\tpred\tconfidence\n");
    let mut grid_cells = Vec::new();
    for (rank, c) in cases.iter().enumerate() {
        writeln!(table, "{rank}\t{}\t{}\t{}\t{:.6}", c.index, c.truth, c.predicted, c.confidence).unwrap();
        grid_cells.push(c.image.clone());
        grid_cells.extend(c.recons.iter().cloned());
    }
    let path = with_ext(dir.join("errors.pgm"), ds);
    if !cases.is_empty() {
        let cols = 1 + net.config.digit_caps_count;
        write_grid(&path, &ImageGrid::new(cases.len(), cols, grid_cells)?)?;
    }
    write_atomic(&dir.join("errors.tsv"), table.as_bytes())?;
    Ok((path, cases.len()))
}

pub fn embeddings_tsv(rows: &[EmbeddingRow<f32>]) -> String {
    let dim = rows.first().map_or(0, |r| r.vector.len());
    let mut s = String::from("iter\ttrue\tpred");
    for i in 0..dim {
        write!(s, "\tv{i}").unwrap();
    }
    s.push('\n');
    for r in rows {
        write!(s, "{}\t{}\t{}", r.iteration, r.truth, r.predicted).unwrap();
        for v in &r.vector {
            // shortest representation that reads back to the same f32
            write!(s, "\t{v:?}").unwrap();
        }
        s.push('\n');
    }
    s
}

pub fn export_embeddings(
    net: &CapsNet<f32>,
    ds: &LabeledDataset<f32>,
    n: usize,
    per_iteration: bool,
    dir: &Path,
) -> Result<(PathBuf, Vec<EmbeddingRow<f32>>)> {
    first_n(ds, n)?;
    let rows = embedding_rows(net, ds, n, per_iteration, BATCH)?;
    let path = dir.join("embeddings.tsv");
    write_atomic(&path, embeddings_tsv(&rows).as_bytes())?;
    Ok((path, rows))
}

/// Fits one 3-component PCA over all rows (every iteration shares the
/// space, so drift is visible) and writes raw and sphereized projections.
pub fn export_pca(rows: &[EmbeddingRow<f32>], dir: &Path) -> Result<(PathBuf, Pca)> {
    let data: Vec<Vec<f64>> = rows
        .iter()
        .map(|r| r.vector.iter().map(|&v| v as f64).collect())
        .collect();
    let pca = pca_project(&data, 3)?;
    let mut s = String::from("iter\ttrue\tpred\tpc0\tpc1\tpc2\ts0\ts1\ts2\n");
    for (r, (p, q)) in rows.iter().zip(pca.projected.iter().zip(&pca.sphereized)) {
        write!(s, "{}\t{}\t{}", r.iteration, r.truth, r.predicted).unwrap();
        for v in p.iter().chain(q) {
            write!(s, "\t{v:.9}").unwrap();
        }
        s.push('\n');
    }
    let path = dir.join("pca.tsv");
    write_atomic(&path, s.as_bytes())?;
    let mut ev = String::from("component\teigenvalue\texplained\n");
    for (i, e) in pca.explained.iter().enumerate() {
        writeln!(ev, "{i}\t{:.9e}\t{e:.9}", pca.eigenvalues[i]).unwrap();
    }
    write_atomic(&dir.join("pca_explained.tsv"), ev.as_bytes())?;
    Ok((path, pca))
}

/// One line per true class, comma-separated counts per predicted class.
pub fn confusion_csv(cm: &ConfusionMatrix) -> String {
    let mut s = String::new();
    for t in 0..cm.classes() {
        let row: Vec<String> = cm.row(t).iter().map(|c| c.to_string()).collect();
        s.push_str(&row.join(","));
        s.push('\n');
    }
    s
}

/// The first 100 test images deformed with `seed`, as one 10×10 grid.
pub fn export_deform_preview(ds: &LabeledDataset<f32>, seed: u64, path: &Path) -> Result<PathBuf> {
    let sub = ds.take(100);
    let (deformed, _) = deform_dataset(&sub, seed)?;
    let path = with_ext(path.to_path_buf(), ds);
    write_grid(&path, &ImageGrid::square(cells(deformed.images()))?)?;
    Ok(path)
}
