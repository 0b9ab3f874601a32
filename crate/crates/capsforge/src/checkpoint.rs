//! Checkpoint files.
//!
//! ```text
//! "CPSN"  u32 version
//! u32 length, UTF-8 JSON config block
//! u32 tensor count
//! per tensor: u16 name length, name, u8 ndim, u32 dims…, u8 dtype, raw values
//! ```
//!
//! Integers and values are little-endian; dtype 0 is f32, 1 is f64.

use std::path::Path;

use serde::{Deserialize, Serialize};

use capsforge_core::train::{Model, ModelConfig};
use capsforge_core::{DType, Real, Tensor};

use crate::config::TrainConfig;
use crate::error::{read_file, write_atomic, Error, Result};

pub const MAGIC: &[u8; 4] = b"CPSN";
pub const VERSION: u32 = 1;

/// Everything besides the tensors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub model: ModelConfig,
    /// Completed epochs.
    pub epoch: usize,
    pub seed: u64,
    pub optimizer_steps: u64,
    /// All random streams derive from `(seed, stream, index)`; the next
    /// epoch's shuffle stream index is `epoch`.
    pub next_shuffle_index: u64,
    pub train: Option<TrainConfig>,
}

fn dtype_tag(d: DType) -> u8 {
    match d {
        DType::F32 => 0,
        DType::F64 => 1,
    }
}

pub fn encode_checkpoint<T: Real>(model: &Model<T>, meta: &CheckpointMeta) -> Result<Vec<u8>> {
    let text = serde_json::to_string(meta)?;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(text.len() as u32).to_le_bytes());
    out.extend_from_slice(text.as_bytes());
    let named = model.named();
    out.extend_from_slice(&(named.len() as u32).to_le_bytes());
    for (name, t) in named {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(t.ndim() as u8);
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        out.push(dtype_tag(T::DTYPE));
        for &v in t.data() {
            match T::DTYPE {
                DType::F32 => out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes()),
                DType::F64 => out.extend_from_slice(&v.as_f64().to_le_bytes()),
            }
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            return Err(Error::Length {
                path: self.path.to_path_buf(),
                expected: (self.pos + n) as u64,
                found: self.bytes.len() as u64,
            });
        };
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

/// Decodes a checkpoint whose tensors are stored as `T`.
pub fn decode_checkpoint<T: Real>(bytes: &[u8], path: &Path) -> Result<(Model<T>, CheckpointMeta)> {
    let mut r = Reader { bytes, pos: 0, path };
    let magic = r.take(4)?;
    if magic != MAGIC {
        return Err(Error::format(path, format!("bad magic {magic:02x?}, expected \"CPSN\"")));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::format(path, format!("unsupported version {version}")));
    }
    let len = r.u32()? as usize;
    let text = std::str::from_utf8(r.take(len)?).map_err(|e| Error::format(path, format!("config block: {e}")))?;
    let meta: CheckpointMeta = serde_json::from_str(text)?;
    let mut model = Model::<T>::zeros(&meta.model)?;
    let count = r.u32()? as usize;
    let mut items = Vec::with_capacity(count);
    for _ in 0..count {
        let n = r.u16()? as usize;
        let name = String::from_utf8(r.take(n)?.to_vec()).map_err(|e| Error::format(path, format!("tensor name: {e}")))?;
        let ndim = r.u8()? as usize;
        let shape = (0..ndim).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let tag = r.u8()?;
        if tag != dtype_tag(T::DTYPE) {
            return Err(Error::Incompatible(format!(
                "{}: tensor {name} has dtype tag {tag}, expected {}",
                path.display(),
                dtype_tag(T::DTYPE)
            )));
        }
        let len: usize = shape.iter().product();
        let data = match T::DTYPE {
            DType::F32 => r
                .take(len * 4)?
                .chunks_exact(4)
                .map(|c| T::lit(f32::from_le_bytes(c.try_into().unwrap()) as f64))
                .collect(),
            DType::F64 => r
                .take(len * 8)?
                .chunks_exact(8)
                .map(|c| T::lit(f64::from_le_bytes(c.try_into().unwrap())))
                .collect(),
        };
        items.push((name, Tensor::new(shape, data)?));
    }
    if r.pos != bytes.len() {
        return Err(Error::Length {
            path: path.to_path_buf(),
            expected: r.pos as u64,
            found: bytes.len() as u64,
        });
    }
    model
        .assign_named(items)
        .map_err(|e| Error::Incompatible(format!("{}: {e}", path.display())))?;
    Ok((model, meta))
}

pub fn save_checkpoint<T: Real>(path: &Path, model: &Model<T>, meta: &CheckpointMeta) -> Result<()> {
    write_atomic(path, &encode_checkpoint(model, meta)?)
}

pub fn load_checkpoint<T: Real>(path: &Path) -> Result<(Model<T>, CheckpointMeta)> {
    decode_checkpoint(&read_file(path)?, path)
}
