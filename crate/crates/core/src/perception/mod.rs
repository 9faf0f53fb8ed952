//! Point clouds and the plane front-end: range/voxel pre-filtering,
//! sequential RANSAC segmentation, plane classification and map association.

mod association;
mod filter;
mod segmentation;

use std::fs;
use std::io::{self, Write};
use std::path::Path;

use nalgebra::Vector3;
use thiserror::Error;

pub use association::{associate_and_map_plane, AssociationConfig, PlaneObservations, PlaneTrack};
pub use filter::{prefilter, PrefilterConfig};
pub use segmentation::{classify_plane, fit_plane, segment_planes, SegmentationConfig, SegmentedPlane};

use crate::geometry::Pose;

#[derive(Debug, Error)]
pub enum PerceptionError {
    #[error("unknown keyframe {0}")]
    UnknownKeyframe(crate::graph::VariableId),
    #[error("{path}:{line}: expected three finite numbers")]
    BadXyzLine { path: String, line: usize },
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Vector3<f64>>,
}

impl PointCloud {
    pub fn new(points: Vec<Vector3<f64>>) -> Self {
        Self { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn transformed(&self, pose: &Pose) -> PointCloud {
        PointCloud {
            points: self.points.iter().map(|p| pose.transform_point(p)).collect(),
        }
    }

    pub fn extend(&mut self, other: &PointCloud) {
        self.points.extend_from_slice(&other.points);
    }
}

impl FromIterator<Vector3<f64>> for PointCloud {
    fn from_iter<I: IntoIterator<Item = Vector3<f64>>>(iter: I) -> Self {
        Self {
            points: iter.into_iter().collect(),
        }
    }
}

/// Parses ASCII `x y z` lines; blank lines and `#` comments are skipped.
pub fn parse_xyz(text: &str, origin: &str) -> Result<PointCloud, PerceptionError> {
    let mut points = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let bad = || PerceptionError::BadXyzLine {
            path: origin.to_string(),
            line: i + 1,
        };
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse::<f64>().map_err(|_| bad()))
            .collect::<Result<_, _>>()?;
        if vals.len() != 3 || vals.iter().any(|v| !v.is_finite()) {
            return Err(bad());
        }
        points.push(Vector3::new(vals[0], vals[1], vals[2]));
    }
    Ok(PointCloud { points })
}

pub fn read_xyz(path: &Path) -> Result<PointCloud, PerceptionError> {
    let text = fs::read_to_string(path)?;
    parse_xyz(&text, &path.display().to_string())
}

/// Formats with Rust's shortest round-trip float printing.
pub fn format_xyz(cloud: &PointCloud) -> String {
    let mut s = String::with_capacity(cloud.len() * 32);
    for p in &cloud.points {
        s.push_str(&format!("{} {} {}\n", p.x, p.y, p.z));
    }
    s
}

pub fn write_xyz(path: &Path, cloud: &PointCloud) -> io::Result<()> {
    let mut f = io::BufWriter::new(fs::File::create(path)?);
    f.write_all(format_xyz(cloud).as_bytes())?;
    f.flush()
}
