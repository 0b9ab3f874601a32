use std::io;
use std::path::{Path, PathBuf};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },

    /// A required input file is absent.
    #[error("missing input {}", .0.display())]
    Missing(PathBuf),

    /// Malformed header or payload.
    #[error("{}: format error: {detail}", path.display())]
    Format { path: PathBuf, detail: String },

    /// The file ends early, or carries trailing bytes.
    #[error("{}: length error: expected {expected} bytes, found {found}", path.display())]
    Length { path: PathBuf, expected: u64, found: u64 },

    /// A checkpoint and a dataset (or two configs) cannot be combined.
    #[error("incompatible: {0}")]
    Incompatible(String),

    /// Flags that parse but do not make sense together.
    #[error("usage: {0}")]
    Usage(String),

    #[error(transparent)]
    Core(#[from] capsforge_core::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit status: 2 usage, 3 missing input, 4 incompatibility,
    /// 1 anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) => 2,
            Error::Missing(_) => 3,
            Error::Incompatible(_) => 4,
            _ => 1,
        }
    }

    pub(crate) fn io(path: &Path, source: io::Error) -> Self {
        if source.kind() == io::ErrorKind::NotFound {
            Error::Missing(path.to_path_buf())
        } else {
            Error::Io {
                path: path.to_path_buf(),
                source,
            }
        }
    }

    pub(crate) fn format(path: &Path, detail: impl Into<String>) -> Self {
        Error::Format {
            path: path.to_path_buf(),
            detail: detail.into(),
        }
    }
}

pub(crate) fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

/// Writes via a sibling temp file and a rename so readers never observe a
/// partial file.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}
