//! Versioned float container shared by clip archives, checkpoints and
//! signature exports.
//!
//! Layout: 8-byte magic, `u32` LE format version, `u32` LE header length,
//! a JSON header, then the payload of little-endian `f32` values. The header
//! lists every array with its offset (in values) and carries a SHA-256 of the
//! payload so truncation and bit rot are detected on load.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const MAGIC: &[u8; 8] = b"GAITDIS\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum ContainerError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("not a gaitdis container (bad magic)")]
    BadMagic,
    #[error("unsupported container version {found} (this build reads version {expected})")]
    Version { found: u32, expected: u32 },
    #[error("corrupt container: {0}")]
    Corrupt(String),
    #[error("container kind mismatch: expected {expected}, found {found}")]
    Kind { expected: String, found: String },
    #[error("missing array {0}")]
    MissingArray(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct ArrayEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
    len: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    kind: String,
    meta: serde_json::Value,
    arrays: Vec<ArrayEntry>,
    payload_sha256: String,
}

/// A named array of `f32` values.
#[derive(Clone, Debug, PartialEq)]
pub struct Array {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Container {
    pub kind: String,
    pub meta: serde_json::Value,
    pub arrays: Vec<Array>,
}

impl Container {
    pub fn new(kind: impl Into<String>, meta: serde_json::Value) -> Self {
        Self {
            kind: kind.into(),
            meta,
            arrays: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, shape: Vec<usize>, data: Vec<f32>) {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        self.arrays.push(Array {
            name: name.into(),
            shape,
            data,
        });
    }

    pub fn get(&self, name: &str) -> Result<&Array, ContainerError> {
        self.arrays
            .iter()
            .find(|a| a.name == name)
            .ok_or_else(|| ContainerError::MissingArray(name.to_string()))
    }

    pub fn expect_kind(&self, kind: &str) -> Result<(), ContainerError> {
        if self.kind != kind {
            return Err(ContainerError::Kind {
                expected: kind.to_string(),
                found: self.kind.clone(),
            });
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let total: usize = self.arrays.iter().map(|a| a.data.len()).sum();
        let mut payload = Vec::with_capacity(total * 4);
        let mut entries = Vec::with_capacity(self.arrays.len());
        let mut offset = 0;
        for a in &self.arrays {
            for v in &a.data {
                payload.extend_from_slice(&v.to_le_bytes());
            }
            entries.push(ArrayEntry {
                name: a.name.clone(),
                shape: a.shape.clone(),
                offset,
                len: a.data.len(),
            });
            offset += a.data.len();
        }
        let header = Header {
            kind: self.kind.clone(),
            meta: self.meta.clone(),
            arrays: entries,
            payload_sha256: hex::encode(Sha256::digest(&payload)),
        };
        let header = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(16 + header.len() + payload.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&payload);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ContainerError> {
        if bytes.len() < 8 || &bytes[..8] != MAGIC {
            return Err(ContainerError::BadMagic);
        }
        if bytes.len() < 16 {
            return Err(ContainerError::Corrupt("truncated preamble".into()));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(ContainerError::Version {
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        let hlen = u32::from_le_bytes(bytes[12..16].try_into().expect("4 bytes")) as usize;
        let body = &bytes[16..];
        if body.len() < hlen {
            return Err(ContainerError::Corrupt("truncated header".into()));
        }
        let header: Header = serde_json::from_slice(&body[..hlen])
            .map_err(|e| ContainerError::Corrupt(format!("header: {e}")))?;
        let payload = &body[hlen..];
        let total: usize = header.arrays.iter().map(|a| a.len).sum();
        if payload.len() != total * 4 {
            return Err(ContainerError::Corrupt(format!(
                "payload is {} bytes, header declares {}",
                payload.len(),
                total * 4
            )));
        }
        if hex::encode(Sha256::digest(payload)) != header.payload_sha256 {
            return Err(ContainerError::Corrupt("payload checksum mismatch".into()));
        }
        let mut arrays = Vec::with_capacity(header.arrays.len());
        for e in header.arrays {
            if e.shape.iter().product::<usize>() != e.len || (e.offset + e.len) > total {
                return Err(ContainerError::Corrupt(format!("bad extent for array {}", e.name)));
            }
            let data = payload[e.offset * 4..(e.offset + e.len) * 4]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            arrays.push(Array {
                name: e.name,
                shape: e.shape,
                data,
            });
        }
        Ok(Self {
            kind: header.kind,
            meta: header.meta,
            arrays,
        })
    }

    /// Writes through a temporary sibling file and renames, so readers never
    /// observe a half-written container.
    pub fn write_file(&self, path: &Path) -> Result<(), ContainerError> {
        let io = |source| ContainerError::Io {
            path: path.display().to_string(),
            source,
        };
        let tmp = path.with_extension("tmp");
        let mut f = fs::File::create(&tmp).map_err(io)?;
        f.write_all(&self.to_bytes()).map_err(io)?;
        f.sync_all().map_err(io)?;
        fs::rename(&tmp, path).map_err(io)
    }

    pub fn read_file(path: &Path) -> Result<Self, ContainerError> {
        let bytes = fs::read(path).map_err(|source| ContainerError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_bytes(&bytes)
    }
}
