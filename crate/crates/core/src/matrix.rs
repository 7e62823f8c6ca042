//! Dense row-major embedding matrices keyed by string ids, and their on-disk
//! `DTSE` format.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! 0        4 bytes   magic "DTSE"
//! 4        u16       version (1)
//! 6        u64       rows
//! 14       u64       dim
//! 22       rows*dim  f32 payload, row-major
//! 22+4rd   rows x    id map entries: u32 byte length, UTF-8 id
//! len-8    u64       offset of the id map (always 22 + 4*rows*dim)
//! ```

use std::collections::HashMap;
use std::path::Path;

use thiserror::Error;

use crate::fsio;

pub const MAGIC: &[u8; 4] = b"DTSE";
pub const VERSION: u16 = 1;
const HEADER_LEN: usize = 22;

#[derive(Debug, Error)]
pub enum MatrixError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad magic: expected DTSE")]
    BadMagic,
    #[error("unsupported matrix format version {0}")]
    UnsupportedVersion(u16),
    #[error("payload length mismatch: header declares {rows}x{dim}")]
    PayloadLengthMismatch { rows: u64, dim: u64 },
    #[error("malformed id map: {0}")]
    BadIdMap(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("duplicate row id {0:?}")]
    DuplicateId(String),
}

#[derive(Debug, Clone)]
pub struct EmbeddingMatrix {
    dim: usize,
    data: Vec<f32>,
    ids: Vec<String>,
    index: HashMap<String, usize>,
}

impl EmbeddingMatrix {
    pub fn new(ids: Vec<String>, dim: usize, data: Vec<f32>) -> Result<Self, MatrixError> {
        if data.len() != ids.len() * dim {
            return Err(MatrixError::Shape(format!(
                "{} values for {} rows of dim {dim}",
                data.len(),
                ids.len()
            )));
        }
        let mut index = HashMap::with_capacity(ids.len());
        for (row, id) in ids.iter().enumerate() {
            if index.insert(id.clone(), row).is_some() {
                return Err(MatrixError::DuplicateId(id.clone()));
            }
        }
        Ok(Self { dim, data, ids, index })
    }

    /// Builds a matrix from f64 rows, rounding to f32.
    pub fn from_f64_rows(ids: Vec<String>, dim: usize, data: &[f64]) -> Result<Self, MatrixError> {
        Self::new(ids, dim, data.iter().map(|&x| x as f32).collect())
    }

    pub fn rows(&self) -> usize {
        self.ids.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn row_index(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn row_by_id(&self, id: &str) -> Option<&[f32]> {
        self.row_index(id).map(|i| self.row(i))
    }

    /// Exact equality of ids, shape and payload bit patterns.
    pub fn bitwise_eq(&self, other: &Self) -> bool {
        self.dim == other.dim
            && self.ids == other.ids
            && self.data.len() == other.data.len()
            && self.data.iter().zip(&other.data).all(|(a, b)| a.to_bits() == b.to_bits())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let payload = self.data.len() * 4;
        let id_bytes: usize = self.ids.iter().map(|s| 4 + s.len()).sum();
        let mut out = Vec::with_capacity(HEADER_LEN + payload + id_bytes + 8);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.rows() as u64).to_le_bytes());
        out.extend_from_slice(&(self.dim as u64).to_le_bytes());
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        let id_offset = out.len() as u64;
        for id in &self.ids {
            out.extend_from_slice(&(id.len() as u32).to_le_bytes());
            out.extend_from_slice(id.as_bytes());
        }
        out.extend_from_slice(&id_offset.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, MatrixError> {
        if bytes.len() < 4 || &bytes[..4] != MAGIC {
            return Err(MatrixError::BadMagic);
        }
        if bytes.len() < HEADER_LEN {
            return Err(MatrixError::PayloadLengthMismatch { rows: 0, dim: 0 });
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != VERSION {
            return Err(MatrixError::UnsupportedVersion(version));
        }
        let rows = u64::from_le_bytes(bytes[6..14].try_into().unwrap());
        let dim = u64::from_le_bytes(bytes[14..22].try_into().unwrap());
        let mismatch = MatrixError::PayloadLengthMismatch { rows, dim };
        let payload = rows
            .checked_mul(dim)
            .and_then(|n| n.checked_mul(4))
            .and_then(|n| usize::try_from(n).ok())
            .ok_or(MatrixError::PayloadLengthMismatch { rows, dim })?;
        let id_offset = HEADER_LEN + payload;
        if bytes.len() < id_offset + 8 {
            return Err(mismatch);
        }
        let trailer = u64::from_le_bytes(bytes[bytes.len() - 8..].try_into().unwrap());
        if trailer != id_offset as u64 {
            return Err(mismatch);
        }
        let data: Vec<f32> = bytes[HEADER_LEN..id_offset]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();

        let map = &bytes[id_offset..bytes.len() - 8];
        let mut ids = Vec::with_capacity(rows as usize);
        let mut pos = 0usize;
        while pos < map.len() {
            if pos + 4 > map.len() {
                return Err(MatrixError::PayloadLengthMismatch { rows, dim });
            }
            let len = u32::from_le_bytes(map[pos..pos + 4].try_into().unwrap()) as usize;
            pos += 4;
            let end = pos.checked_add(len).filter(|&e| e <= map.len());
            // a shifted payload shows up as a malformed id map
            let end = end.ok_or(MatrixError::PayloadLengthMismatch { rows, dim })?;
            let id = std::str::from_utf8(&map[pos..end])
                .map_err(|e| MatrixError::BadIdMap(e.to_string()))?;
            ids.push(id.to_owned());
            pos = end;
        }
        if ids.len() as u64 != rows {
            return Err(MatrixError::PayloadLengthMismatch { rows, dim });
        }
        Self::new(ids, dim as usize, data)
    }

    pub fn save(&self, path: &Path) -> Result<(), MatrixError> {
        fsio::write_atomic(path, &self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, MatrixError> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}
