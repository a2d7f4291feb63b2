//! Self-describing container for trained parameters.
//!
//! Layout: `BSTK` magic, format version (`u32` LE), header length (`u64` LE),
//! JSON header, tensor data as `f64` LE in header order, then a SHA-256
//! digest of everything before it.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::encoder::EncoderDescriptor;
use crate::stance::CLASS_ORDER;

pub const MAGIC: &[u8; 4] = b"BSTK";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error("checkpoint version mismatch: {0}")]
    VersionMismatch(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorMeta {
    pub name: String,
    pub shape: Vec<usize>,
}

impl TensorMeta {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Header {
    /// Model family, e.g. `branch`, `svm`, `textcnn`.
    pub family: String,
    pub class_order: Vec<String>,
    pub config: serde_json::Value,
    #[serde(default)]
    pub encoder: Option<EncoderDescriptor>,
    #[serde(default)]
    pub hidden_size: Option<usize>,
    pub tensors: Vec<TensorMeta>,
    #[serde(default)]
    pub extra: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: Header,
    pub data: Vec<Vec<f64>>,
}

impl Checkpoint {
    pub fn new(family: &str, config: serde_json::Value) -> Checkpoint {
        Checkpoint {
            header: Header {
                family: family.to_string(),
                class_order: CLASS_ORDER.iter().map(|s| s.as_str().to_string()).collect(),
                config,
                encoder: None,
                hidden_size: None,
                tensors: Vec::new(),
                extra: serde_json::Value::Null,
            },
            data: Vec::new(),
        }
    }

    pub fn push(&mut self, name: &str, shape: &[usize], data: &[f64]) {
        assert_eq!(shape.iter().product::<usize>(), data.len(), "tensor `{name}` shape");
        self.header.tensors.push(TensorMeta { name: name.to_string(), shape: shape.to_vec() });
        self.data.push(data.to_vec());
    }

    pub fn tensor(&self, name: &str) -> Result<(&[usize], &[f64]), CheckpointError> {
        self.header
            .tensors
            .iter()
            .zip(&self.data)
            .find(|(m, _)| m.name == name)
            .map(|(m, d)| (m.shape.as_slice(), d.as_slice()))
            .ok_or_else(|| CheckpointError::Corrupt(format!("missing tensor `{name}`")))
    }

    /// Like [`Checkpoint::tensor`] but also checks the shape.
    pub fn tensor_shaped(&self, name: &str, shape: &[usize]) -> Result<&[f64], CheckpointError> {
        let (s, d) = self.tensor(name)?;
        if s != shape {
            return Err(CheckpointError::VersionMismatch(format!(
                "tensor `{name}` has shape {s:?}, expected {shape:?}"
            )));
        }
        Ok(d)
    }

    pub fn expect_family(&self, family: &str) -> Result<(), CheckpointError> {
        if self.header.family != family {
            return Err(CheckpointError::VersionMismatch(format!(
                "checkpoint holds a `{}` model, expected `{family}`",
                self.header.family
            )));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = serde_json::to_vec(&self.header).expect("header serializes");
        let n: usize = self.data.iter().map(Vec::len).sum();
        let mut out = Vec::with_capacity(16 + header.len() + 8 * n + 32);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for t in &self.data {
            for x in t {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint, CheckpointError> {
        let corrupt = |m: &str| CheckpointError::Corrupt(m.to_string());
        if bytes.len() < 16 + 32 {
            return Err(corrupt("file too short"));
        }
        if &bytes[..4] != MAGIC {
            return Err(corrupt("bad magic"));
        }
        let (body, digest) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != digest {
            return Err(corrupt("checksum mismatch (truncated or modified)"));
        }
        let version = u32::from_le_bytes(body[4..8].try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(CheckpointError::VersionMismatch(format!(
                "format version {version}, this build reads {FORMAT_VERSION}"
            )));
        }
        let hlen = u64::from_le_bytes(body[8..16].try_into().expect("8 bytes")) as usize;
        let header_end =
            16usize.checked_add(hlen).filter(|&e| e <= body.len()).ok_or_else(|| corrupt("header length"))?;
        let header: Header =
            serde_json::from_slice(&body[16..header_end]).map_err(|e| CheckpointError::Corrupt(e.to_string()))?;
        let expected: Vec<String> = CLASS_ORDER.iter().map(|s| s.as_str().to_string()).collect();
        if header.class_order != expected {
            return Err(CheckpointError::VersionMismatch(format!("class order {:?}", header.class_order)));
        }
        let mut rest = &body[header_end..];
        let mut data = Vec::with_capacity(header.tensors.len());
        for meta in &header.tensors {
            let n = meta.len();
            if rest.len() < 8 * n {
                return Err(corrupt("tensor data shorter than header says"));
            }
            let (chunk, tail) = rest.split_at(8 * n);
            data.push(chunk.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes"))).collect());
            rest = tail;
        }
        if !rest.is_empty() {
            return Err(corrupt("trailing bytes after tensor data"));
        }
        Ok(Checkpoint { header, data })
    }

    /// Write via a temporary file and rename.
    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        write_atomic(path, &self.to_bytes()).map_err(|source| CheckpointError::Io { path: path.to_path_buf(), source })
    }

    pub fn load(path: &Path) -> Result<Checkpoint, CheckpointError> {
        let bytes = fs::read(path).map_err(|source| CheckpointError::Io { path: path.to_path_buf(), source })?;
        Checkpoint::from_bytes(&bytes)
    }
}

/// Write `bytes` to a sibling temporary file, then rename over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let mut c = Checkpoint::new("toy", serde_json::json!({"a": 1}));
        c.push("w", &[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.5]);
        c.push("b", &[2], &[-0.0, f64::MIN_POSITIVE]);
        c
    }

    #[test]
    fn round_trip() {
        let c = sample();
        let back = Checkpoint::from_bytes(&c.to_bytes()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.tensor("w").unwrap().0, &[2, 3]);
    }

    #[test]
    fn truncated_is_corrupt() {
        let bytes = sample().to_bytes();
        for cut in [0, 10, bytes.len() / 2, bytes.len() - 1] {
            assert!(matches!(Checkpoint::from_bytes(&bytes[..cut]), Err(CheckpointError::Corrupt(_))));
        }
    }

    #[test]
    fn flipped_byte_is_corrupt() {
        let mut bytes = sample().to_bytes();
        let i = bytes.len() - 40;
        bytes[i] ^= 1;
        assert!(matches!(Checkpoint::from_bytes(&bytes), Err(CheckpointError::Corrupt(_))));
    }

    #[test]
    fn shape_check() {
        let c = sample();
        assert!(c.tensor_shaped("w", &[2, 3]).is_ok());
        assert!(matches!(c.tensor_shaped("w", &[3, 2]), Err(CheckpointError::VersionMismatch(_))));
        assert!(matches!(c.tensor("nope"), Err(CheckpointError::Corrupt(_))));
    }

    #[test]
    fn save_and_load_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.bstk");
        sample().save(&p).unwrap();
        assert_eq!(Checkpoint::load(&p).unwrap(), sample());
    }
}
