//! On-disk dataset layout under the data directory and the cache of
//! deformed test sets.
//!
//! ```text
//! <data>/mnist/{train,t10k}-{images-idx3,labels-idx1}-ubyte
//! <data>/fashion/…            same names as mnist
//! <data>/cifar10/data_batch_{1..5}.bin, test_batch.bin
//! <data>/deformed/            generated
//! ```

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use capsforge_core::data::{deform_dataset, AffineRanges, LabeledDataset, Split};

use crate::cifar::load_cifar10;
use crate::config::DatasetKind;
use crate::error::{write_atomic, Error, Result};
use crate::idx::{load_idx, save_idx};

/// Image and label files (IDX) or batch files (CIFAR) of one split.
pub fn split_files(data_dir: &Path, kind: DatasetKind, split: Split) -> Vec<PathBuf> {
    let dir = data_dir.join(kind.as_str());
    match (kind, split) {
        (DatasetKind::Cifar10, Split::Train) => (1..=5).map(|i| dir.join(format!("data_batch_{i}.bin"))).collect(),
        (DatasetKind::Cifar10, Split::Test) => vec![dir.join("test_batch.bin")],
        (_, split) => {
            let stem = if split == Split::Train { "train" } else { "t10k" };
            vec![
                dir.join(format!("{stem}-images-idx3-ubyte")),
                dir.join(format!("{stem}-labels-idx1-ubyte")),
            ]
        }
    }
}

/// Fails with [`Error::Missing`] on the first absent file.
pub fn require_files(files: &[PathBuf]) -> Result<()> {
    match files.iter().find(|p| !p.is_file()) {
        Some(p) => Err(Error::Missing(p.clone())),
        None => Ok(()),
    }
}

/// Loads a split, keeping only the first `subset` samples when given.
pub fn load_split(
    data_dir: &Path,
    kind: DatasetKind,
    split: Split,
    subset: Option<usize>,
) -> Result<LabeledDataset<f32>> {
    let files = split_files(data_dir, kind, split);
    require_files(&files)?;
    let mut ds = match kind {
        DatasetKind::Cifar10 => load_cifar10(&files, split)?,
        _ => load_idx(&files[0], &files[1], kind.num_classes(), kind.as_str(), split)?,
    };
    if let Some(n) = subset {
        if n > ds.len() {
            log::warn!("{} {} has {} samples, fewer than the requested {n}", kind.as_str(), split.as_str(), ds.len());
        }
        ds = ds.take(n);
    }
    Ok(ds)
}

/// Paths of a cached deformed set: images, labels and the sidecar.
pub fn deformed_paths(cache_dir: &Path, name: &str, count: usize, seed: u64) -> [PathBuf; 3] {
    let stem = format!("{name}-test-{count}-seed{seed}");
    [
        cache_dir.join(format!("{stem}-images.idx")),
        cache_dir.join(format!("{stem}-labels.idx")),
        cache_dir.join(format!("{stem}.txt")),
    ]
}

fn sidecar(name: &str, count: usize, seed: u64) -> String {
    let r = AffineRanges::STANDARD;
    let mut s = String::new();
    writeln!(s, "dataset {name}").unwrap();
    writeln!(s, "split test").unwrap();
    writeln!(s, "count {count}").unwrap();
    writeln!(s, "seed {seed}").unwrap();
    writeln!(s, "angle_deg -{0} {0}", r.angle_deg).unwrap();
    writeln!(s, "shear -{0} {0}", r.shear).unwrap();
    writeln!(s, "translate_px -{0} {0}", r.translate).unwrap();
    writeln!(s, "scale {}", r.scale).unwrap();
    s
}

/// The deformed version of `clean` for `seed`, generated and cached on first
/// use. The returned set is always read back from the cache, so every caller
/// sees the same byte-quantised pixels.
pub fn deformed_test_set(cache_dir: &Path, clean: &LabeledDataset<f32>, seed: u64) -> Result<LabeledDataset<f32>> {
    let [images, labels, side] = deformed_paths(cache_dir, &clean.name, clean.len(), seed);
    let expected = sidecar(&clean.name, clean.len(), seed);
    let fresh = std::fs::read_to_string(&side).ok().as_deref() == Some(expected.as_str());
    if !(fresh && images.is_file() && labels.is_file()) {
        log::info!("generating deformed {} test set ({} images, seed {seed})", clean.name, clean.len());
        let (deformed, _) = deform_dataset(clean, seed)?;
        save_idx(&deformed, &images, &labels)?;
        write_atomic(&side, expected.as_bytes())?;
    }
    let mut ds = load_idx(&images, &labels, clean.num_classes(), &clean.name, Split::Test)?;
    if ds.labels() != clean.labels() || ds.image_shape() != clean.image_shape() {
        return Err(Error::format(&images, "cached deformed set does not match the clean set"));
    }
    ds.name = clean.name.clone();
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_names() {
        let f = split_files(Path::new("d"), DatasetKind::Fashion, Split::Test);
        assert_eq!(f[0], Path::new("d/fashion/t10k-images-idx3-ubyte"));
        assert_eq!(split_files(Path::new("d"), DatasetKind::Cifar10, Split::Train).len(), 5);
    }

    #[test]
    fn missing_files_are_reported() {
        let err = load_split(Path::new("/nonexistent"), DatasetKind::Mnist, Split::Train, None).unwrap_err();
        assert!(matches!(err, Error::Missing(p) if p.ends_with("train-images-idx3-ubyte")));
    }
}
