use std::collections::HashMap;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::PointCloud;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PrefilterConfig {
    pub range_min: f64,
    pub range_max: f64,
    /// Voxel edge length in meters; zero disables downsampling.
    pub voxel: f64,
}

impl Default for PrefilterConfig {
    fn default() -> Self {
        Self {
            range_min: 0.1,
            range_max: 100.0,
            voxel: 0.1,
        }
    }
}

/// Drops points outside the range band, then keeps one centroid per voxel.
///
/// Output voxels appear in order of their first point in the input.
pub fn prefilter(cloud: &PointCloud, cfg: &PrefilterConfig) -> PointCloud {
    let in_range = cloud.points.iter().filter(|p| {
        let r = p.norm();
        r >= cfg.range_min && r <= cfg.range_max
    });
    if cfg.voxel <= 0.0 {
        return in_range.copied().collect();
    }
    let mut slot: HashMap<[i64; 3], usize> = HashMap::new();
    let mut sums: Vec<(Vector3<f64>, usize)> = Vec::new();
    for p in in_range {
        let key = [
            (p.x / cfg.voxel).floor() as i64,
            (p.y / cfg.voxel).floor() as i64,
            (p.z / cfg.voxel).floor() as i64,
        ];
        let i = *slot.entry(key).or_insert_with(|| {
            sums.push((Vector3::zeros(), 0));
            sums.len() - 1
        });
        sums[i].0 += p;
        sums[i].1 += 1;
    }
    sums.into_iter().map(|(s, n)| s / n as f64).collect()
}
