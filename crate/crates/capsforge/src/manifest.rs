//! Run manifests: the resolved configuration and a content hash of every
//! input, written before any computation starts.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{read_file, write_atomic, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputDigest {
    pub path: PathBuf,
    pub bytes: u64,
    /// SHA-256 of `"blob <len>\0" ‖ content`, as git hashes blobs.
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    /// The command line as given.
    pub args: Vec<String>,
    pub seed: u64,
    pub config: serde_json::Value,
    pub inputs: Vec<InputDigest>,
    /// SHA-256 over the `"<sha256> <path>\n"` lines of all inputs.
    pub input_hash: String,
    pub out_dir: PathBuf,
}

pub fn blob_hash(content: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", content.len()).as_bytes());
    h.update(content);
    hex::encode(h.finalize())
}

pub fn digest_inputs(paths: &[PathBuf]) -> Result<(Vec<InputDigest>, String)> {
    let mut digests = Vec::with_capacity(paths.len());
    let mut tree = Sha256::new();
    for p in paths {
        let content = read_file(p)?;
        let d = InputDigest {
            path: p.clone(),
            bytes: content.len() as u64,
            sha256: blob_hash(&content),
        };
        tree.update(format!("{} {}\n", d.sha256, p.display()).as_bytes());
        digests.push(d);
    }
    Ok((digests, hex::encode(tree.finalize())))
}

impl RunManifest {
    pub fn new(
        command: &str,
        args: Vec<String>,
        seed: u64,
        config: serde_json::Value,
        inputs: &[PathBuf],
        out_dir: &Path,
    ) -> Result<Self> {
        let (inputs, input_hash) = digest_inputs(inputs)?;
        Ok(RunManifest {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            args,
            seed,
            config,
            inputs,
            input_hash,
            out_dir: out_dir.to_path_buf(),
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        write_atomic(path, text.as_bytes())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blob_hash_matches_git_convention() {
        // `printf 'hello\n' | git hash-object --stdin` hashes the same
        // preimage with SHA-1; here it is checked against a direct SHA-256.
        let direct = hex::encode(Sha256::digest(b"blob 6\0hello\n"));
        assert_eq!(blob_hash(b"hello\n"), direct);
        assert_eq!(
            blob_hash(b""),
            "473a0f4c3be8a93681a267e3b1e9a7dcda1185436fe141f7749120a303721813"
        );
    }
}
