//! Versioned tensor container.
//!
//! Layout: 8-byte magic, `u32` LE version, `u32` LE header length, UTF-8
//! header, then each tensor as little-endian `f32` row-major data in header
//! order. The header holds free-form metadata text, a `--- tensors` line and
//! one `name d0xd1...` line per tensor.

use std::path::Path;

use sha2::{Digest, Sha256};
use thiserror::Error;

use super::Tensor;

const MAGIC: &[u8; 8] = b"LAYOUTCK";
const VERSION: u32 = 1;
const SEPARATOR: &str = "--- tensors";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint i/o on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u32),
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
    #[error("tensor `{name}` has shape {found:?}, expected {expected:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("checkpoint is missing tensor `{0}`")]
    Missing(String),
    #[error("checkpoint has unexpected tensor `{0}`")]
    Unexpected(String),
    #[error("checkpoint metadata: {0}")]
    Metadata(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub meta: String,
    pub tensors: Vec<(String, Tensor<f32>)>,
}

impl Checkpoint {
    pub fn get(&self, name: &str) -> Option<&Tensor<f32>> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut header = String::new();
        header.push_str(&self.meta);
        if !header.is_empty() && !header.ends_with('\n') {
            header.push('\n');
        }
        header.push_str(SEPARATOR);
        header.push('\n');
        for (name, t) in &self.tensors {
            let dims: Vec<String> = t.shape().iter().map(|d| d.to_string()).collect();
            header.push_str(&format!("{name} {}\n", dims.join("x")));
        }
        let body: usize = self.tensors.iter().map(|(_, t)| t.len() * 4).sum();
        let mut out = Vec::with_capacity(16 + header.len() + body);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(header.as_bytes());
        for (_, t) in &self.tensors {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(CheckpointError::UnsupportedVersion(version));
        }
        let header_len = u32::from_le_bytes(bytes[12..16].try_into().expect("4 bytes")) as usize;
        let header_end = 16usize
            .checked_add(header_len)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| CheckpointError::Malformed("header runs past end of file".into()))?;
        let header = std::str::from_utf8(&bytes[16..header_end])
            .map_err(|_| CheckpointError::Malformed("header is not UTF-8".into()))?;
        let (meta, table) = match header.find(&format!("{SEPARATOR}\n")) {
            Some(0) => ("", &header[SEPARATOR.len() + 1..]),
            Some(i) => (&header[..i], &header[i + SEPARATOR.len() + 1..]),
            None => return Err(CheckpointError::Malformed("missing tensor table".into())),
        };
        let mut cursor = header_end;
        let mut tensors = Vec::new();
        for line in table.lines().filter(|l| !l.trim().is_empty()) {
            let (name, dims) = line
                .rsplit_once(' ')
                .ok_or_else(|| CheckpointError::Malformed(format!("bad tensor line `{line}`")))?;
            let shape = dims
                .split('x')
                .map(|d| d.parse::<usize>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|_| CheckpointError::Malformed(format!("bad shape in `{line}`")))?;
            let count: usize = shape.iter().product();
            let end = cursor
                .checked_add(count * 4)
                .filter(|&e| e <= bytes.len())
                .ok_or_else(|| {
                    CheckpointError::Malformed(format!("data for `{name}` is truncated"))
                })?;
            let data: Vec<f32> = bytes[cursor..end]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            cursor = end;
            let t = Tensor::new(shape, data)
                .map_err(|e| CheckpointError::Malformed(format!("tensor `{name}`: {e}")))?;
            tensors.push((name.to_string(), t));
        }
        if cursor != bytes.len() {
            return Err(CheckpointError::Malformed(format!(
                "{} trailing bytes",
                bytes.len() - cursor
            )));
        }
        Ok(Self {
            meta: meta.to_string(),
            tensors,
        })
    }

    /// Writes the checkpoint and returns its content hash.
    pub fn save(&self, path: &Path) -> Result<String, CheckpointError> {
        let bytes = self.to_bytes();
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|source| io(path, source))?;
        }
        std::fs::write(path, &bytes).map_err(|source| io(path, source))?;
        Ok(content_hash(&bytes))
    }

    /// Reads a checkpoint and returns it with its content hash.
    pub fn load(path: &Path) -> Result<(Self, String), CheckpointError> {
        let bytes = std::fs::read(path).map_err(|source| io(path, source))?;
        Ok((Self::from_bytes(&bytes)?, content_hash(&bytes)))
    }
}

fn io(path: &Path, source: std::io::Error) -> CheckpointError {
    CheckpointError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Hex SHA-256 of checkpoint bytes.
pub fn content_hash(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
