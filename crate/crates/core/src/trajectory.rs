//! Timestamped pose sequences in the TUM text format
//! (`timestamp tx ty tz qx qy qz qw`, one pose per line).

use std::fs;
use std::io;
use std::path::Path;

use nalgebra::{Quaternion, UnitQuaternion, Vector3};
use thiserror::Error;

use crate::geometry::Pose;

#[derive(Debug, Error)]
pub enum TrajectoryError {
    #[error("{path}:{line}: expected `timestamp tx ty tz qx qy qz qw`")]
    BadLine { path: String, line: usize },
    #[error("{path}:{line}: timestamps must be strictly increasing")]
    NonMonotonic { path: String, line: usize },
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Stamped {
    pub timestamp: f64,
    pub pose: Pose,
}

pub type Trajectory = Vec<Stamped>;

pub fn format_tum(traj: &[Stamped]) -> String {
    let mut s = String::new();
    for p in traj {
        let t = &p.pose.translation;
        let q = p.pose.rotation.quaternion();
        s.push_str(&format!(
            "{} {} {} {} {} {} {} {}\n",
            p.timestamp, t.x, t.y, t.z, q.i, q.j, q.k, q.w
        ));
    }
    s
}

/// Quaternions already unit to within 1e-9 are taken verbatim so that a
/// written trajectory reads back bit-exactly; others are normalized.
pub fn parse_tum(text: &str, origin: &str) -> Result<Trajectory, TrajectoryError> {
    let mut out: Trajectory = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let bad = || TrajectoryError::BadLine {
            path: origin.to_string(),
            line: i + 1,
        };
        let v: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse::<f64>().map_err(|_| bad()))
            .collect::<Result<_, _>>()?;
        if v.len() != 8 || v.iter().any(|x| !x.is_finite()) {
            return Err(bad());
        }
        let q = Quaternion::new(v[7], v[4], v[5], v[6]);
        let norm = q.norm();
        if norm < 1e-12 {
            return Err(bad());
        }
        let rotation = if (norm - 1.0).abs() <= 1e-9 {
            UnitQuaternion::new_unchecked(q)
        } else {
            UnitQuaternion::from_quaternion(q)
        };
        if out.last().is_some_and(|p| p.timestamp >= v[0]) {
            return Err(TrajectoryError::NonMonotonic {
                path: origin.to_string(),
                line: i + 1,
            });
        }
        out.push(Stamped {
            timestamp: v[0],
            pose: Pose {
                rotation,
                translation: Vector3::new(v[1], v[2], v[3]),
            },
        });
    }
    Ok(out)
}

pub fn read_tum(path: &Path) -> Result<Trajectory, TrajectoryError> {
    let text = fs::read_to_string(path)?;
    parse_tum(&text, &path.display().to_string())
}

pub fn write_tum(path: &Path, traj: &[Stamped]) -> io::Result<()> {
    fs::write(path, format_tum(traj))
}
