use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// Coordinate frame a pose maps into.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Frame {
    /// KITTI odometry convention: left camera of scan 0.
    Camera,
    /// LiDAR frame of scan 0; all downstream modules work here.
    World,
}

/// Rigid transform stored as a row-major 3x4 matrix `[R | t]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub m: [[f64; 4]; 3],
    pub frame: Frame,
}

impl Pose {
    pub const IDENTITY: Pose = Pose {
        m: [
            [1.0, 0.0, 0.0, 0.0],
            [0.0, 1.0, 0.0, 0.0],
            [0.0, 0.0, 1.0, 0.0],
        ],
        frame: Frame::World,
    };

    pub fn from_row_major(v: [f64; 12], frame: Frame) -> Self {
        let mut m = [[0.0; 4]; 3];
        for r in 0..3 {
            m[r].copy_from_slice(&v[4 * r..4 * r + 4]);
        }
        Pose { m, frame }
    }

    pub fn to_row_major(&self) -> [f64; 12] {
        let mut v = [0.0; 12];
        for r in 0..3 {
            v[4 * r..4 * r + 4].copy_from_slice(&self.m[r]);
        }
        v
    }

    pub fn translation(t: [f64; 3]) -> Self {
        let mut p = Pose::IDENTITY;
        for (r, tr) in t.iter().enumerate() {
            p.m[r][3] = *tr;
        }
        p
    }

    /// Rotation about z by `yaw` radians followed by translation `t`.
    pub fn from_yaw_translation(yaw: f64, t: [f64; 3]) -> Self {
        let (s, c) = yaw.sin_cos();
        Pose {
            m: [[c, -s, 0.0, t[0]], [s, c, 0.0, t[1]], [0.0, 0.0, 1.0, t[2]]],
            frame: Frame::World,
        }
    }

    pub fn with_frame(mut self, frame: Frame) -> Self {
        self.frame = frame;
        self
    }

    pub fn apply(&self, p: [f64; 3]) -> [f64; 3] {
        let m = &self.m;
        [
            m[0][0] * p[0] + m[0][1] * p[1] + m[0][2] * p[2] + m[0][3],
            m[1][0] * p[0] + m[1][1] * p[1] + m[1][2] * p[2] + m[1][3],
            m[2][0] * p[0] + m[2][1] * p[1] + m[2][2] * p[2] + m[2][3],
        ]
    }

    /// `self ∘ other`: applies `other` first. The result carries `self`'s frame.
    pub fn compose(&self, other: &Pose) -> Pose {
        let a = &self.m;
        let b = &other.m;
        let mut m = [[0.0; 4]; 3];
        for r in 0..3 {
            for c in 0..4 {
                let mut acc = a[r][0] * b[0][c] + a[r][1] * b[1][c] + a[r][2] * b[2][c];
                if c == 3 {
                    acc += a[r][3];
                }
                m[r][c] = acc;
            }
        }
        Pose {
            m,
            frame: self.frame,
        }
    }

    /// Rigid inverse `[Rᵀ | −Rᵀt]`.
    pub fn inverse(&self) -> Pose {
        let a = &self.m;
        let mut m = [[0.0; 4]; 3];
        for r in 0..3 {
            for c in 0..3 {
                m[r][c] = a[c][r];
            }
            m[r][3] = -(a[0][r] * a[0][3] + a[1][r] * a[1][3] + a[2][r] * a[2][3]);
        }
        Pose {
            m,
            frame: self.frame,
        }
    }

    /// Largest entry of `|RᵀR − I|`.
    pub fn orthonormality_error(&self) -> f64 {
        let a = &self.m;
        let mut worst: f64 = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                let dot: f64 = (0..3).map(|k| a[k][i] * a[k][j]).sum();
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((dot - target).abs());
            }
        }
        worst
    }

    pub fn is_rigid(&self) -> bool {
        self.m.iter().flatten().all(|v| v.is_finite()) && self.orthonormality_error() <= 1e-6
    }
}

fn parse_12(line: &str, lineno: usize) -> Result<[f64; 12]> {
    let vals: Vec<f64> = line
        .split_whitespace()
        .map(|tok| {
            tok.parse::<f64>().map_err(|_| Error::MalformedPose {
                line: lineno,
                reason: format!("not a number: {tok:?}"),
            })
        })
        .collect::<Result<_>>()?;
    let arr: [f64; 12] = vals.try_into().map_err(|v: Vec<f64>| Error::MalformedPose {
        line: lineno,
        reason: format!("expected 12 values, found {}", v.len()),
    })?;
    if arr.iter().any(|v| !v.is_finite()) {
        return Err(Error::MalformedPose {
            line: lineno,
            reason: "non-finite value".into(),
        });
    }
    Ok(arr)
}

/// Extracts the `Tr:` (camera-from-LiDAR) entry of a KITTI calibration file.
pub fn read_tr_from_str(calib: &str) -> Option<Pose> {
    calib.lines().enumerate().find_map(|(i, line)| {
        let rest = line.trim_start().strip_prefix("Tr:")?;
        parse_12(rest, i + 1)
            .ok()
            .map(|v| Pose::from_row_major(v, Frame::Camera))
    })
}

/// Parses camera-frame poses and converts each to the LiDAR world frame as
/// `Tr⁻¹ · P · Tr`.
pub fn read_poses_from_str(poses: &str, tr: &Pose) -> Result<Vec<Pose>> {
    let tr_inv = tr.inverse();
    let mut out = Vec::new();
    for (i, line) in poses.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let p = Pose::from_row_major(parse_12(line, i + 1)?, Frame::Camera);
        if !p.is_rigid() {
            return Err(Error::MalformedPose {
                line: i + 1,
                reason: "rotation block is not orthonormal".into(),
            });
        }
        out.push(tr_inv.compose(&p).compose(tr).with_frame(Frame::World));
    }
    Ok(out)
}

pub fn read_poses(poses_path: impl AsRef<Path>, calib_path: impl AsRef<Path>) -> Result<Vec<Pose>> {
    let read = |p: &Path| {
        fs::read_to_string(p).map_err(|e| {
            if e.kind() == std::io::ErrorKind::NotFound {
                Error::MissingFile(p.to_path_buf())
            } else {
                Error::io(p, e)
            }
        })
    };
    let calib_path = calib_path.as_ref();
    let calib = read(calib_path)?;
    let tr = read_tr_from_str(&calib).ok_or_else(|| Error::MissingTr(calib_path.to_path_buf()))?;
    read_poses_from_str(&read(poses_path.as_ref())?, &tr)
}

/// Writes poses one per line. Values use the shortest exact decimal form, so a
/// re-read reproduces them bit for bit.
pub fn write_poses(poses: &[Pose], path: impl AsRef<Path>) -> Result<()> {
    let mut s = String::new();
    for p in poses {
        let line: Vec<String> = p.to_row_major().iter().map(|v| format!("{v:e}")).collect();
        writeln!(s, "{}", line.join(" ")).unwrap();
    }
    let path = path.as_ref();
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    const IDENT: &str = "1 0 0 0 0 1 0 0 0 0 1 0";

    #[test]
    fn identity_pose_identity_tr() {
        let tr = read_tr_from_str(&format!("P0: {IDENT}\nTr: {IDENT}\n")).unwrap();
        let poses = read_poses_from_str(IDENT, &tr).unwrap();
        assert_eq!(poses[0].m, Pose::IDENTITY.m);
        assert_eq!(poses[0].frame, Frame::World);
    }

    #[test]
    fn pure_translation() {
        let tr = Pose::IDENTITY;
        let poses = read_poses_from_str("1 0 0 1 0 1 0 0 0 0 1 0", &tr).unwrap();
        assert_eq!(poses[0].apply([0.0, 0.0, 0.0]), [1.0, 0.0, 0.0]);
    }

    #[test]
    fn missing_tr() {
        assert!(read_tr_from_str(&format!("P0: {IDENT}\n")).is_none());
    }

    #[test]
    fn malformed_line() {
        let err = read_poses_from_str("1 0 0 0 0 1 0 0 0 0 1", &Pose::IDENTITY).unwrap_err();
        assert!(matches!(err, Error::MalformedPose { line: 1, .. }));
        let err = read_poses_from_str(&format!("{IDENT}\n1 0 0 x 0 1 0 0 0 0 1 0"), &Pose::IDENTITY)
            .unwrap_err();
        assert!(matches!(err, Error::MalformedPose { line: 2, .. }));
    }

    #[test]
    fn inverse_roundtrip() {
        let p = Pose::from_yaw_translation(0.7, [1.0, -2.0, 0.5]);
        let q = p.compose(&p.inverse());
        for r in 0..3 {
            for c in 0..4 {
                let want = if r == c { 1.0 } else { 0.0 };
                assert!((q.m[r][c] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn write_read_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let poses = vec![
            Pose::from_yaw_translation(0.123456789, [1.0 / 3.0, 2.5e-7, -7.25]),
            Pose::IDENTITY,
        ];
        let path = dir.path().join("poses.txt");
        write_poses(&poses, &path).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        let back = read_poses_from_str(&text, &Pose::IDENTITY).unwrap();
        assert_eq!(back[0].m, poses[0].m);
    }
}
