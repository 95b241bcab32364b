//! `P4DE` sidecar files carrying externally computed per-point clustering fields.
//!
//! Layout (little-endian): magic `P4DE`, version `u32`, `N u32`, `D u32`, then
//! `N×D` embeddings, `N` objectness values, `N×D` variances, all `f32`.

use std::path::Path;

use super::{read_file, write_file};
use crate::error::{Error, Result};

pub const SIDECAR_MAGIC: [u8; 4] = *b"P4DE";
pub const SIDECAR_VERSION: u32 = 1;

/// Per-scan clustering fields as produced by an external network (or the synthetic oracle).
#[derive(Debug, Clone, PartialEq)]
pub struct ScanFields {
    pub dim: usize,
    /// Row-major `N×dim`.
    pub embeddings: Vec<f32>,
    pub objectness: Vec<f32>,
    /// Row-major `N×dim`, strictly positive.
    pub variances: Vec<f32>,
}

impl ScanFields {
    pub fn new(dim: usize, embeddings: Vec<f32>, objectness: Vec<f32>, variances: Vec<f32>) -> Result<Self> {
        let n = objectness.len();
        if embeddings.len() != n * dim {
            return Err(Error::LengthMismatch {
                expected: n * dim,
                found: embeddings.len(),
            });
        }
        if variances.len() != n * dim {
            return Err(Error::LengthMismatch {
                expected: n * dim,
                found: variances.len(),
            });
        }
        if let Some(index) = objectness
            .iter()
            .position(|o| !o.is_finite() || !(0.0..=1.0).contains(o))
        {
            return Err(Error::Format(format!(
                "objectness {} at point {index} outside [0, 1]",
                objectness[index]
            )));
        }
        if let Some(i) = variances.iter().position(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::NonPositiveVariance {
                row: i / dim.max(1),
                dim: i % dim.max(1),
                value: variances[i] as f64,
            });
        }
        if let Some(i) = embeddings.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index: i / dim.max(1) });
        }
        Ok(ScanFields {
            dim,
            embeddings,
            objectness,
            variances,
        })
    }

    pub fn len(&self) -> usize {
        self.objectness.len()
    }

    pub fn is_empty(&self) -> bool {
        self.objectness.is_empty()
    }

    pub fn embedding(&self, i: usize) -> &[f32] {
        &self.embeddings[i * self.dim..(i + 1) * self.dim]
    }

    pub fn variance(&self, i: usize) -> &[f32] {
        &self.variances[i * self.dim..(i + 1) * self.dim]
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let n = self.len();
        let mut out = Vec::with_capacity(16 + 4 * (2 * n * self.dim + n));
        out.extend_from_slice(&SIDECAR_MAGIC);
        out.extend_from_slice(&SIDECAR_VERSION.to_le_bytes());
        out.extend_from_slice(&(n as u32).to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        for v in self.embeddings.iter().chain(&self.objectness).chain(&self.variances) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 {
            return Err(Error::Format("sidecar shorter than its header".into()));
        }
        if bytes[..4] != SIDECAR_MAGIC {
            return Err(Error::Format("bad sidecar magic".into()));
        }
        let word = |k: usize| u32::from_le_bytes(bytes[4 * k..4 * k + 4].try_into().unwrap());
        let version = word(1);
        if version != SIDECAR_VERSION {
            return Err(Error::Format(format!("unsupported sidecar version {version}")));
        }
        let n = word(2) as usize;
        let dim = word(3) as usize;
        let floats = 2 * n * dim + n;
        if bytes.len() != 16 + 4 * floats {
            return Err(Error::Format(format!(
                "sidecar body is {} bytes, header implies {}",
                bytes.len() - 16,
                4 * floats
            )));
        }
        let mut vals = bytes[16..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()));
        let embeddings: Vec<f32> = vals.by_ref().take(n * dim).collect();
        let objectness: Vec<f32> = vals.by_ref().take(n).collect();
        let variances: Vec<f32> = vals.collect();
        ScanFields::new(dim, embeddings, objectness, variances)
    }
}

pub fn read_sidecar(path: impl AsRef<Path>) -> Result<ScanFields> {
    ScanFields::from_bytes(&read_file(path.as_ref())?)
}

pub fn write_sidecar(fields: &ScanFields, path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), &fields.to_bytes())
}
