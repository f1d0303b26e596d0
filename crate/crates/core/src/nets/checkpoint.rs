//! Versioned checkpoint container.
//!
//! Layout: 8-byte magic `IWRLCKPT`, u32 format version, u64 header length,
//! a UTF-8 JSON header (metadata plus named array manifest), then the arrays
//! in manifest order as little-endian 64-bit floats. Floats round-trip
//! bit-exactly.

use serde::{Deserialize, Serialize};
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;
use thiserror::Error;

const MAGIC: &[u8; 8] = b"IWRLCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("i/o: {0}")]
    Io(#[from] io::Error),
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint format version {0}")]
    UnsupportedVersion(u32),
    #[error("malformed header: {0}")]
    Header(#[from] serde_json::Error),
    #[error("array {name} truncated: expected {expected} values")]
    Truncated { name: String, expected: usize },
    #[error("checkpoint has no array named {0}")]
    MissingArray(String),
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    meta: serde_json::Value,
    arrays: Vec<ArrayEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ArrayEntry {
    name: String,
    len: usize,
}

/// Named f64 arrays plus free-form JSON metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub meta: serde_json::Value,
    arrays: Vec<(String, Vec<f64>)>,
}

impl Checkpoint {
    pub fn new(meta: serde_json::Value) -> Self {
        Self {
            meta,
            arrays: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, data: Vec<f64>) {
        let name = name.into();
        debug_assert!(
            !self.arrays.iter().any(|(n, _)| *n == name),
            "duplicate array {name}"
        );
        self.arrays.push((name, data));
    }

    pub fn array(&self, name: &str) -> Result<&[f64], CheckpointError> {
        self.arrays
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, d)| d.as_slice())
            .ok_or_else(|| CheckpointError::MissingArray(name.to_string()))
    }

    pub fn array_names(&self) -> impl Iterator<Item = &str> {
        self.arrays.iter().map(|(n, _)| n.as_str())
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<(), CheckpointError> {
        let header = Header {
            meta: self.meta.clone(),
            arrays: self
                .arrays
                .iter()
                .map(|(name, d)| ArrayEntry {
                    name: name.clone(),
                    len: d.len(),
                })
                .collect(),
        };
        let header_bytes = serde_json::to_vec(&header)?;
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&(header_bytes.len() as u64).to_le_bytes())?;
        w.write_all(&header_bytes)?;
        for (_, data) in &self.arrays {
            for v in data {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self, CheckpointError> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let mut v4 = [0u8; 4];
        r.read_exact(&mut v4)?;
        let version = u32::from_le_bytes(v4);
        if version != FORMAT_VERSION {
            return Err(CheckpointError::UnsupportedVersion(version));
        }
        let mut l8 = [0u8; 8];
        r.read_exact(&mut l8)?;
        let header_len = u64::from_le_bytes(l8) as usize;
        let mut header_bytes = vec![0u8; header_len];
        r.read_exact(&mut header_bytes)?;
        let header: Header = serde_json::from_slice(&header_bytes)?;
        let mut arrays = Vec::with_capacity(header.arrays.len());
        let mut f8 = [0u8; 8];
        for entry in header.arrays {
            let mut data = Vec::with_capacity(entry.len);
            for _ in 0..entry.len {
                r.read_exact(&mut f8).map_err(|_| CheckpointError::Truncated {
                    name: entry.name.clone(),
                    expected: entry.len,
                })?;
                data.push(f64::from_le_bytes(f8));
            }
            arrays.push((entry.name, data));
        }
        Ok(Self {
            meta: header.meta,
            arrays,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        Self::read_from(BufReader::new(File::open(path)?))
    }
}
