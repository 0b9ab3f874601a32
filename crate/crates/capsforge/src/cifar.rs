//! CIFAR-10 binary batches: 3073-byte records of one label byte followed by
//! the R, G and B planes, each 32×32 row-major.

use std::path::Path;

use capsforge_core::data::{LabeledDataset, Split};

use crate::error::{read_file, Error, Result};

pub const SIDE: usize = 32;
pub const PLANE: usize = SIDE * SIDE;
pub const RECORD: usize = 1 + 3 * PLANE;
pub const CLASSES: usize = 10;

/// Splits one batch into pixel bytes (`[N, 3, 32, 32]` order) and labels.
pub fn parse_batch(bytes: &[u8], path: &Path) -> Result<(Vec<u8>, Vec<usize>)> {
    if bytes.len() % RECORD != 0 {
        return Err(Error::format(
            path,
            format!("length {} is not a multiple of the {RECORD}-byte record", bytes.len()),
        ));
    }
    let n = bytes.len() / RECORD;
    let mut pixels = Vec::with_capacity(n * (RECORD - 1));
    let mut labels = Vec::with_capacity(n);
    for (i, rec) in bytes.chunks_exact(RECORD).enumerate() {
        if rec[0] as usize >= CLASSES {
            return Err(Error::format(path, format!("record {i} has label {}", rec[0])));
        }
        labels.push(rec[0] as usize);
        pixels.extend_from_slice(&rec[1..]);
    }
    Ok((pixels, labels))
}

pub fn encode_batch(pixels: &[u8], labels: &[usize]) -> Vec<u8> {
    assert_eq!(pixels.len(), labels.len() * (RECORD - 1), "pixel/label count mismatch");
    let mut out = Vec::with_capacity(labels.len() * RECORD);
    for (rec, &l) in pixels.chunks_exact(RECORD - 1).zip(labels) {
        out.push(l as u8);
        out.extend_from_slice(rec);
    }
    out
}

/// Concatenates the batches in the given order.
pub fn load_cifar10(paths: &[impl AsRef<Path>], split: Split) -> Result<LabeledDataset<f32>> {
    let mut pixels = Vec::new();
    let mut labels = Vec::new();
    for p in paths {
        let p = p.as_ref();
        let (px, lb) = parse_batch(&read_file(p)?, p)?;
        pixels.extend(px);
        labels.extend(lb);
    }
    Ok(LabeledDataset::from_bytes(
        [labels.len(), 3, SIDE, SIDE],
        &pixels,
        labels,
        CLASSES,
        "cifar10",
        split,
    )?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn record_layout() {
        let mut rec = vec![7u8];
        rec.extend((0..3 * PLANE).map(|i| (i % 251) as u8));
        let (px, lb) = parse_batch(&rec, Path::new("x")).unwrap();
        assert_eq!(lb, [7]);
        assert_eq!(px, rec[1..]);
        assert_eq!(encode_batch(&px, &lb), rec);
    }

    #[test]
    fn bad_lengths_and_labels() {
        assert!(parse_batch(&[0; RECORD + 1], Path::new("x")).is_err());
        let mut rec = vec![0u8; RECORD];
        rec[0] = 10;
        assert!(parse_batch(&rec, Path::new("x")).is_err());
        assert_eq!(parse_batch(&[], Path::new("x")).unwrap().1.len(), 0);
    }
}
