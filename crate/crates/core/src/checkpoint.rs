//! Named-tensor checkpoints.
//!
//! A checkpoint is a pair of files. The binary file holds, all little-endian:
//!
//! ```text
//! offset  size        field
//! 0       4           magic b"GIFT"
//! 4       4           u32 format version (1)
//! 8       4           u32 tensor count N
//! 12      ...         N shape records: u32 rank, then rank x u64 extents
//! ...     8 * total   f64 values of every tensor, in record order
//! ```
//!
//! The manifest, written next to it with `.json` appended to the file name,
//! lists each tensor's name, shape and element offset plus free-form metadata.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"GIFT";
const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("manifest: {0}")]
    Manifest(#[from] serde_json::Error),
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error("missing tensor {0:?}")]
    Missing(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub tensors: Vec<ManifestEntry>,
    #[serde(default)]
    pub metadata: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub tensors: Vec<(String, Tensor)>,
    pub metadata: serde_json::Value,
}

impl Checkpoint {
    pub fn get(&self, name: &str) -> Result<&Tensor, CheckpointError> {
        self.tensors
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| CheckpointError::Missing(name.to_string()))
    }
}

pub fn manifest_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub fn encode(tensors: &[(&str, &Tensor)]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (_, t) in tensors {
        out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
    }
    for (_, t) in tensors {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

/// Decodes the binary part into shapes and values.
pub fn decode(bytes: &[u8]) -> Result<Vec<Tensor>, CheckpointError> {
    let corrupt = |m: &str| CheckpointError::Corrupt(m.to_string());
    let mut pos = 0usize;
    let mut take = |n: usize| -> Result<&[u8], CheckpointError> {
        let s = bytes.get(pos..pos + n).ok_or_else(|| corrupt("truncated"))?;
        pos += n;
        Ok(s)
    };
    if take(4)? != MAGIC {
        return Err(corrupt("bad magic"));
    }
    let version = u32::from_le_bytes(take(4)?.try_into().unwrap());
    if version != VERSION {
        return Err(CheckpointError::Corrupt(format!("unsupported version {version}")));
    }
    let count = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
    let mut shapes = Vec::with_capacity(count);
    for _ in 0..count {
        let rank = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
        let shape = (0..rank)
            .map(|_| Ok(u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize))
            .collect::<Result<Vec<_>, CheckpointError>>()?;
        shapes.push(shape);
    }
    let mut tensors = Vec::with_capacity(count);
    for shape in shapes {
        let n: usize = shape.iter().product();
        let raw = take(8 * n)?;
        let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        tensors.push(Tensor::new(&shape, data).map_err(|e| CheckpointError::Corrupt(e.to_string()))?);
    }
    if pos != bytes.len() {
        return Err(corrupt("trailing bytes"));
    }
    Ok(tensors)
}

pub fn save(path: impl AsRef<Path>, tensors: &[(&str, &Tensor)], metadata: serde_json::Value) -> Result<(), CheckpointError> {
    let path = path.as_ref();
    let mut offset = 0;
    let entries = tensors
        .iter()
        .map(|(name, t)| {
            let e = ManifestEntry { name: name.to_string(), shape: t.shape().to_vec(), offset };
            offset += t.len();
            e
        })
        .collect();
    let manifest = Manifest { version: VERSION, tensors: entries, metadata };
    fs::write(path, encode(tensors))?;
    fs::write(manifest_path(path), serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<Checkpoint, CheckpointError> {
    let path = path.as_ref();
    let tensors = decode(&fs::read(path)?)?;
    let manifest: Manifest = serde_json::from_str(&fs::read_to_string(manifest_path(path))?)?;
    if manifest.tensors.len() != tensors.len() {
        return Err(CheckpointError::Corrupt(format!(
            "manifest lists {} tensors, binary holds {}",
            manifest.tensors.len(),
            tensors.len()
        )));
    }
    let mut named = Vec::with_capacity(tensors.len());
    for (entry, t) in manifest.tensors.into_iter().zip(tensors) {
        if entry.shape != t.shape() {
            return Err(CheckpointError::Corrupt(format!("shape of {:?} disagrees with manifest", entry.name)));
        }
        named.push((entry.name, t));
    }
    Ok(Checkpoint { tensors: named, metadata: manifest.metadata })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn byte_layout() {
        let a = Tensor::new(&[2], vec![1.0, -2.0]).unwrap();
        let b = Tensor::scalar(0.5);
        let bytes = encode(&[("a", &a), ("b", &b)]);
        let mut expect = b"GIFT".to_vec();
        expect.extend_from_slice(&1u32.to_le_bytes());
        expect.extend_from_slice(&2u32.to_le_bytes());
        expect.extend_from_slice(&1u32.to_le_bytes());
        expect.extend_from_slice(&2u64.to_le_bytes());
        expect.extend_from_slice(&0u32.to_le_bytes());
        for v in [1.0f64, -2.0, 0.5] {
            expect.extend_from_slice(&v.to_le_bytes());
        }
        assert_eq!(bytes, expect);
        let back = decode(&bytes).unwrap();
        assert_eq!(back, vec![a, b]);
    }

    #[test]
    fn corrupt_inputs() {
        let a = Tensor::ones(&[3]);
        let bytes = encode(&[("a", &a)]);
        assert!(decode(&bytes[..bytes.len() - 1]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(decode(&extra).is_err());
        let mut magic = bytes;
        magic[0] = b'X';
        assert!(decode(&magic).is_err());
    }

    #[test]
    fn save_load_with_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.bin");
        let a = Tensor::new(&[1, 2], vec![0.1, 0.2]).unwrap();
        save(&path, &[("w", &a)], serde_json::json!({"epoch": 3})).unwrap();
        let ck = load(&path).unwrap();
        assert_eq!(ck.get("w").unwrap(), &a);
        assert_eq!(ck.metadata["epoch"], 3);
        assert!(ck.get("nope").is_err());
        let manifest: Manifest = serde_json::from_str(&fs::read_to_string(manifest_path(&path)).unwrap()).unwrap();
        assert_eq!(manifest.tensors[0].name, "w");
    }
}
