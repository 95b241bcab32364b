//! SemanticKITTI container formats.
//!
//! Scans are little-endian `f32` quadruples `(x, y, z, remission)`, labels are
//! little-endian `u32` words with the semantic class in the low 16 bits and the
//! instance id in the high 16 bits. Parsing never depends on host endianness.

mod pose;
mod sequence;
mod sidecar;

use std::fs;
use std::path::Path;

pub use pose::{read_poses, read_poses_from_str, read_tr_from_str, write_poses, Frame, Pose};
pub use sequence::{load_sequence, scan_file_name, SequenceHandle};
pub use sidecar::{read_sidecar, write_sidecar, ScanFields, SIDECAR_MAGIC, SIDECAR_VERSION};

use crate::error::{Error, Result};

const POINT_BYTES: usize = 16;
const LABEL_BYTES: usize = 4;

/// One LiDAR sweep in the sensor frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Scan {
    pub points: Vec<[f32; 3]>,
    pub remission: Vec<f32>,
    pub scan_index: usize,
}

impl Scan {
    pub fn new(points: Vec<[f32; 3]>, remission: Vec<f32>, scan_index: usize) -> Result<Self> {
        if points.len() != remission.len() {
            return Err(Error::LengthMismatch {
                expected: points.len(),
                found: remission.len(),
            });
        }
        for (index, (p, r)) in points.iter().zip(&remission).enumerate() {
            if !p.iter().all(|v| v.is_finite()) || !r.is_finite() {
                return Err(Error::NonFinite { index });
            }
            if !(0.0..=1.0).contains(r) {
                return Err(Error::Remission { index, value: *r });
            }
        }
        Ok(Scan {
            points,
            remission,
            scan_index,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn from_bytes(bytes: &[u8], scan_index: usize, path: &Path) -> Result<Self> {
        if !bytes.len().is_multiple_of(POINT_BYTES) {
            return Err(Error::Truncated {
                path: path.to_path_buf(),
                len: bytes.len() as u64,
                record: POINT_BYTES as u64,
            });
        }
        let n = bytes.len() / POINT_BYTES;
        let mut points = Vec::with_capacity(n);
        let mut remission = Vec::with_capacity(n);
        for rec in bytes.chunks_exact(POINT_BYTES) {
            let f = |k: usize| f32::from_le_bytes(rec[4 * k..4 * k + 4].try_into().unwrap());
            points.push([f(0), f(1), f(2)]);
            remission.push(f(3));
        }
        Scan::new(points, remission, scan_index)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.len() * POINT_BYTES);
        for (p, r) in self.points.iter().zip(&self.remission) {
            for v in [p[0], p[1], p[2], *r] {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }
}

/// Per-point `(semantic class, instance id)` pairs.
///
/// Values are held as `u32` so that ids produced by the tracker can be checked
/// against the 16-bit packing limit when written, rather than silently wrapped.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PanopticLabels {
    pub semantic: Vec<u32>,
    pub instance: Vec<u32>,
}

impl PanopticLabels {
    pub fn new(semantic: Vec<u32>, instance: Vec<u32>) -> Result<Self> {
        if semantic.len() != instance.len() {
            return Err(Error::LengthMismatch {
                expected: semantic.len(),
                found: instance.len(),
            });
        }
        Ok(PanopticLabels { semantic, instance })
    }

    pub fn with_len(n: usize) -> Self {
        PanopticLabels {
            semantic: vec![0; n],
            instance: vec![0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.semantic.len()
    }

    pub fn is_empty(&self) -> bool {
        self.semantic.is_empty()
    }

    pub fn from_words(words: &[u32]) -> Self {
        PanopticLabels {
            semantic: words.iter().map(|w| w & 0xFFFF).collect(),
            instance: words.iter().map(|w| w >> 16).collect(),
        }
    }

    pub fn to_words(&self) -> Result<Vec<u32>> {
        self.semantic
            .iter()
            .zip(&self.instance)
            .enumerate()
            .map(|(index, (&c, &id))| {
                if c > 0xFFFF {
                    return Err(Error::Overflow {
                        index,
                        field: "semantic",
                        value: c,
                    });
                }
                if id > 0xFFFF {
                    return Err(Error::Overflow {
                        index,
                        field: "instance",
                        value: id,
                    });
                }
                Ok(c | (id << 16))
            })
            .collect()
    }

    /// Zeroes the instance id of every point whose class is in `ignore`.
    pub fn clear_ignored_instances(&mut self, ignore: impl Fn(u32) -> bool) {
        for (c, id) in self.semantic.iter().zip(self.instance.iter_mut()) {
            if ignore(*c) {
                *id = 0;
            }
        }
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::MissingFile(path.to_path_buf())
        } else {
            Error::io(path, e)
        }
    })
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Reads a `.bin` point scan. The scan index is taken from the file stem when it
/// is numeric, otherwise 0.
pub fn read_point_scan(path: impl AsRef<Path>) -> Result<Scan> {
    let path = path.as_ref();
    let bytes = read_file(path)?;
    let index = path
        .file_stem()
        .and_then(|s| s.to_str())
        .and_then(|s| s.parse().ok())
        .unwrap_or(0);
    Scan::from_bytes(&bytes, index, path)
}

pub fn write_point_scan(scan: &Scan, path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), &scan.to_bytes())
}

pub fn labels_from_bytes(bytes: &[u8], expected_n: usize, path: &Path) -> Result<PanopticLabels> {
    if !bytes.len().is_multiple_of(LABEL_BYTES) {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            len: bytes.len() as u64,
            record: LABEL_BYTES as u64,
        });
    }
    let n = bytes.len() / LABEL_BYTES;
    if n != expected_n {
        return Err(Error::LengthMismatch {
            expected: expected_n,
            found: n,
        });
    }
    let words: Vec<u32> = bytes
        .chunks_exact(LABEL_BYTES)
        .map(|w| u32::from_le_bytes(w.try_into().unwrap()))
        .collect();
    Ok(PanopticLabels::from_words(&words))
}

/// Reads a `.label` file holding exactly `expected_n` words.
pub fn read_labels(path: impl AsRef<Path>, expected_n: usize) -> Result<PanopticLabels> {
    let path = path.as_ref();
    let bytes = read_file(path)?;
    labels_from_bytes(&bytes, expected_n, path)
}

/// Reads a `.label` file without a paired scan; the point count is implied by the file size.
pub fn read_labels_unchecked(path: impl AsRef<Path>) -> Result<PanopticLabels> {
    let path = path.as_ref();
    let bytes = read_file(path)?;
    labels_from_bytes(&bytes, bytes.len() / LABEL_BYTES, path)
}

pub fn labels_to_bytes(labels: &PanopticLabels) -> Result<Vec<u8>> {
    Ok(labels
        .to_words()?
        .into_iter()
        .flat_map(u32::to_le_bytes)
        .collect())
}

pub fn write_labels(labels: &PanopticLabels, path: impl AsRef<Path>) -> Result<()> {
    let bytes = labels_to_bytes(labels)?;
    write_file(path.as_ref(), &bytes)
}
