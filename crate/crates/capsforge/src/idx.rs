//! IDX containers as used by MNIST and Fashion-MNIST: a big-endian magic
//! `00 00 08 nd`, `nd` big-endian u32 sizes, then raw u8 values.

use std::path::Path;

use capsforge_core::data::{LabeledDataset, Split};

use crate::error::{read_file, write_atomic, Error, Result};

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;
/// Four-dimensional u8 array, used for multi-channel caches `[N, C, H, W]`.
pub const TENSOR4_MAGIC: u32 = 0x0000_0804;

const U8_TYPE: u8 = 0x08;

/// A decoded u8 IDX array.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IdxArray {
    pub dims: Vec<usize>,
    pub data: Vec<u8>,
}

impl IdxArray {
    pub fn magic(&self) -> u32 {
        ((U8_TYPE as u32) << 8) | self.dims.len() as u32
    }
}

/// Parses one array and checks its magic is one of `accept`. `path` only
/// labels errors.
pub fn parse_idx(bytes: &[u8], accept: &[u32], path: &Path) -> Result<IdxArray> {
    if bytes.len() < 4 {
        return Err(Error::Length {
            path: path.to_path_buf(),
            expected: 4,
            found: bytes.len() as u64,
        });
    }
    let magic = u32::from_be_bytes(bytes[..4].try_into().unwrap());
    if !accept.contains(&magic) {
        let want: Vec<String> = accept.iter().map(|m| format!("{m:#010x}")).collect();
        return Err(Error::format(
            path,
            format!(
                "bad magic {:02x} {:02x} {:02x} {:02x}, expected {}",
                bytes[0],
                bytes[1],
                bytes[2],
                bytes[3],
                want.join(" or ")
            ),
        ));
    }
    let nd = bytes[3] as usize;
    let header = 4 + 4 * nd;
    if bytes.len() < header {
        return Err(Error::Length {
            path: path.to_path_buf(),
            expected: header as u64,
            found: bytes.len() as u64,
        });
    }
    let dims: Vec<usize> = bytes[4..header]
        .chunks_exact(4)
        .map(|c| u32::from_be_bytes(c.try_into().unwrap()) as usize)
        .collect();
    let count = dims.iter().try_fold(1u64, |acc, &d| acc.checked_mul(d as u64));
    let expected = count.and_then(|c| c.checked_add(header as u64)).ok_or_else(|| {
        Error::format(path, format!("dimensions {dims:?} overflow"))
    })?;
    if bytes.len() as u64 != expected {
        return Err(Error::Length {
            path: path.to_path_buf(),
            expected,
            found: bytes.len() as u64,
        });
    }
    Ok(IdxArray {
        dims,
        data: bytes[header..].to_vec(),
    })
}

pub fn encode_idx(array: &IdxArray) -> Vec<u8> {
    let mut out = Vec::with_capacity(4 + 4 * array.dims.len() + array.data.len());
    out.extend_from_slice(&array.magic().to_be_bytes());
    for &d in &array.dims {
        out.extend_from_slice(&(d as u32).to_be_bytes());
    }
    out.extend_from_slice(&array.data);
    out
}

pub fn read_idx(path: &Path, accept: &[u32]) -> Result<IdxArray> {
    parse_idx(&read_file(path)?, accept, path)
}

pub fn write_idx(path: &Path, array: &IdxArray) -> Result<()> {
    write_atomic(path, &encode_idx(array))
}

/// Loads an image file (`[N, H, W]` grayscale, or `[N, C, H, W]`) and its
/// label file into a dataset scaled to `[0, 1]`.
pub fn load_idx(
    images: &Path,
    labels: &Path,
    num_classes: usize,
    name: &str,
    split: Split,
) -> Result<LabeledDataset<f32>> {
    let img = read_idx(images, &[IMAGES_MAGIC, TENSOR4_MAGIC])?;
    let lab = read_idx(labels, &[LABELS_MAGIC])?;
    let shape = match img.dims[..] {
        [n, h, w] => [n, 1, h, w],
        [n, c, h, w] => [n, c, h, w],
        _ => unreachable!("magic fixes the rank"),
    };
    if lab.dims[0] != shape[0] {
        return Err(Error::format(
            labels,
            format!("{} labels for {} images in {}", lab.dims[0], shape[0], images.display()),
        ));
    }
    if let Some(i) = lab.data.iter().position(|&l| l as usize >= num_classes) {
        return Err(Error::format(
            labels,
            format!("label {} at index {i} outside [0, {num_classes})", lab.data[i]),
        ));
    }
    let labels = lab.data.iter().map(|&l| l as usize).collect();
    Ok(LabeledDataset::from_bytes(shape, &img.data, labels, num_classes, name, split)?)
}

/// Writes `ds` as an image/label file pair, pixels rounded to bytes.
pub fn save_idx(ds: &LabeledDataset<f32>, images: &Path, labels: &Path) -> Result<()> {
    let [c, h, w] = ds.image_shape();
    let dims = if c == 1 { vec![ds.len(), h, w] } else { vec![ds.len(), c, h, w] };
    write_idx(images, &IdxArray { dims, data: ds.to_bytes() })?;
    let data = ds.labels().iter().map(|&l| l as u8).collect();
    write_idx(
        labels,
        &IdxArray {
            dims: vec![ds.len()],
            data,
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p() -> &'static Path {
        Path::new("fixture")
    }

    #[test]
    fn parses_a_hand_written_header() {
        let bytes = [0, 0, 8, 3, 0, 0, 0, 1, 0, 0, 0, 2, 0, 0, 0, 2, 0, 64, 128, 255];
        let a = parse_idx(&bytes, &[IMAGES_MAGIC], p()).unwrap();
        assert_eq!(a.dims, [1, 2, 2]);
        assert_eq!(a.data, [0, 64, 128, 255]);
        assert_eq!(encode_idx(&a), bytes);
    }

    #[test]
    fn magic_mismatch_reports_observed_bytes() {
        let bytes = [0, 0, 8, 3, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0];
        let err = parse_idx(&bytes, &[LABELS_MAGIC], p()).unwrap_err();
        let msg = err.to_string();
        assert!(matches!(err, Error::Format { .. }), "{msg}");
        assert!(msg.contains("00 00 08 03") && msg.contains("0x00000801"), "{msg}");
    }

    #[test]
    fn truncation_and_trailing_bytes_are_length_errors() {
        let full = encode_idx(&IdxArray {
            dims: vec![3],
            data: vec![1, 2, 3],
        });
        for cut in [0, 2, 6, full.len() - 1] {
            assert!(matches!(
                parse_idx(&full[..cut], &[LABELS_MAGIC], p()),
                Err(Error::Length { .. })
            ));
        }
        let mut long = full.clone();
        long.push(0);
        let err = parse_idx(&long, &[LABELS_MAGIC], p()).unwrap_err();
        assert!(matches!(err, Error::Length { expected: 11, found: 12, .. }), "{err}");
    }
}
