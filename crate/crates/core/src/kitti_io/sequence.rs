use std::fs;
use std::ops::Range;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use super::{read_labels, read_labels_unchecked, read_point_scan, read_poses, read_sidecar};
use super::{PanopticLabels, Pose, Scan, ScanFields};
use crate::error::{Error, Result};

pub fn scan_file_name(index: usize, ext: &str) -> String {
    format!("{index:06}.{ext}")
}

/// Lazy handle over one sequence directory:
///
/// ```text
/// <dir>/velodyne/NNNNNN.bin
/// <dir>/labels/NNNNNN.label
/// <dir>/embeddings/NNNNNN.p4de   (optional)
/// <dir>/poses.txt, <dir>/calib.txt
/// ```
///
/// Nothing is read until a scan is requested; scan/label sizes are checked at access.
#[derive(Debug)]
pub struct SequenceHandle {
    dir: PathBuf,
    range: Range<usize>,
    poses: OnceLock<Vec<Pose>>,
}

fn count_files(dir: &Path, ext: &str) -> Option<usize> {
    let entries = fs::read_dir(dir).ok()?;
    let mut indices: Vec<usize> = entries
        .filter_map(|e| e.ok())
        .filter_map(|e| {
            let p = e.path();
            if p.extension()?.to_str()? != ext {
                return None;
            }
            p.file_stem()?.to_str()?.parse().ok()
        })
        .collect();
    indices.sort_unstable();
    // scans are expected to be numbered 0..n without gaps
    Some(indices.iter().enumerate().take_while(|(i, v)| i == *v).count())
}

/// Opens a sequence directory. `scan_range` restricts the handle to a sub-range
/// of scan indices; `None` covers every scan present.
pub fn load_sequence(dir: impl AsRef<Path>, scan_range: Option<Range<usize>>) -> Result<SequenceHandle> {
    let dir = dir.as_ref().to_path_buf();
    if !dir.is_dir() {
        return Err(Error::MissingFile(dir));
    }
    let total = count_files(&dir.join("velodyne"), "bin")
        .or_else(|| count_files(&dir.join("labels"), "label"))
        .or_else(|| count_files(&dir.join("predictions"), "label"))
        .ok_or_else(|| Error::MissingFile(dir.join("velodyne")))?;
    let range = match scan_range {
        None => 0..total,
        Some(r) => {
            if r.end > total || r.start > r.end {
                return Err(Error::IndexOutOfRange {
                    index: r.end.saturating_sub(1).max(r.start),
                    len: total,
                });
            }
            r
        }
    };
    Ok(SequenceHandle {
        dir,
        range,
        poses: OnceLock::new(),
    })
}

impl SequenceHandle {
    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn range(&self) -> Range<usize> {
        self.range.clone()
    }

    pub fn len(&self) -> usize {
        self.range.len()
    }

    pub fn is_empty(&self) -> bool {
        self.range.is_empty()
    }

    fn check(&self, index: usize) -> Result<()> {
        if self.range.contains(&index) {
            Ok(())
        } else {
            Err(Error::IndexOutOfRange {
                index,
                len: self.range.end,
            })
        }
    }

    pub fn scan_path(&self, index: usize) -> PathBuf {
        self.dir.join("velodyne").join(scan_file_name(index, "bin"))
    }

    pub fn label_path(&self, subdir: &str, index: usize) -> PathBuf {
        self.dir.join(subdir).join(scan_file_name(index, "label"))
    }

    pub fn sidecar_path(&self, index: usize) -> PathBuf {
        self.dir.join("embeddings").join(scan_file_name(index, "p4de"))
    }

    pub fn has_scans(&self) -> bool {
        self.dir.join("velodyne").is_dir()
    }

    pub fn scan(&self, index: usize) -> Result<Scan> {
        self.check(index)?;
        let mut scan = read_point_scan(self.scan_path(index))?;
        scan.scan_index = index;
        Ok(scan)
    }

    /// Labels from `<dir>/labels`.
    pub fn labels(&self, index: usize) -> Result<PanopticLabels> {
        self.labels_in("labels", index)
    }

    /// Labels from `<dir>/<subdir>`, size-checked against the scan when scans exist.
    pub fn labels_in(&self, subdir: &str, index: usize) -> Result<PanopticLabels> {
        self.check(index)?;
        let path = self.label_path(subdir, index);
        if self.has_scans() {
            let n = self.scan_len(index)?;
            read_labels(path, n)
        } else {
            read_labels_unchecked(path)
        }
    }

    fn scan_len(&self, index: usize) -> Result<usize> {
        let path = self.scan_path(index);
        let meta = fs::metadata(&path).map_err(|e| Error::io(&path, e))?;
        if meta.len() % 16 != 0 {
            return Err(Error::Truncated {
                path,
                len: meta.len(),
                record: 16,
            });
        }
        Ok((meta.len() / 16) as usize)
    }

    pub fn fields(&self, index: usize) -> Result<ScanFields> {
        self.check(index)?;
        let fields = read_sidecar(self.sidecar_path(index))?;
        if self.has_scans() {
            let n = self.scan_len(index)?;
            if fields.len() != n {
                return Err(Error::LengthMismatch {
                    expected: n,
                    found: fields.len(),
                });
            }
        }
        Ok(fields)
    }

    /// LiDAR-to-world poses for every scan of the sequence (not just the range).
    pub fn poses(&self) -> Result<&[Pose]> {
        if let Some(p) = self.poses.get() {
            return Ok(p);
        }
        let poses = read_poses(self.dir.join("poses.txt"), self.dir.join("calib.txt"))?;
        if poses.len() < self.range.end {
            return Err(Error::LengthMismatch {
                expected: self.range.end,
                found: poses.len(),
            });
        }
        Ok(self.poses.get_or_init(|| poses))
    }

    pub fn pose(&self, index: usize) -> Result<Pose> {
        self.check(index)?;
        Ok(self.poses()?[index])
    }
}
