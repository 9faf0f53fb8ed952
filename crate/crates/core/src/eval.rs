//! Trajectory and map accuracy metrics.

use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;
use thiserror::Error;

use crate::perception::PointCloud;
use crate::spatial::PointIndex;
use crate::trajectory::Stamped;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("no estimate pose has a reference within {0} s")]
    NoOverlap(f64),
    #[error("point cloud is empty")]
    EmptyCloud,
}

/// Largest timestamp difference for associating two poses.
pub const MAX_TIME_DIFFERENCE: f64 = 0.01;

/// Pairs each estimate pose with the reference pose nearest in time.
pub fn associate(estimate: &[Stamped], reference: &[Stamped]) -> Vec<(Vector3<f64>, Vector3<f64>)> {
    let mut pairs = Vec::new();
    for e in estimate {
        let i = reference.partition_point(|r| r.timestamp < e.timestamp);
        let best = [i.checked_sub(1), Some(i)]
            .into_iter()
            .flatten()
            .filter(|&j| j < reference.len())
            .min_by(|&a, &b| {
                let da = (reference[a].timestamp - e.timestamp).abs();
                let db = (reference[b].timestamp - e.timestamp).abs();
                da.total_cmp(&db)
            });
        if let Some(j) = best {
            if (reference[j].timestamp - e.timestamp).abs() <= MAX_TIME_DIFFERENCE {
                pairs.push((e.pose.translation, reference[j].pose.translation));
            }
        }
    }
    pairs
}

/// Rotation and translation minimizing `Σ |R a + t - b|²` (Kabsch, no scale).
pub fn align_rigid(pairs: &[(Vector3<f64>, Vector3<f64>)]) -> (Matrix3<f64>, Vector3<f64>) {
    let n = pairs.len() as f64;
    let ca = pairs.iter().map(|p| p.0).sum::<Vector3<f64>>() / n;
    let cb = pairs.iter().map(|p| p.1).sum::<Vector3<f64>>() / n;
    let mut h = Matrix3::zeros();
    for (a, b) in pairs {
        h += (a - ca) * (b - cb).transpose();
    }
    let svd = h.svd(true, true);
    let u = svd.u.expect("requested u");
    let v_t = svd.v_t.expect("requested v_t");
    let mut fix = Matrix3::identity();
    if (v_t.transpose() * u.transpose()).determinant() < 0.0 {
        fix[(2, 2)] = -1.0;
    }
    let r = v_t.transpose() * fix * u.transpose();
    (r, cb - r * ca)
}

/// RMSE of translation residuals after rigid alignment of the estimate onto
/// the reference.
pub fn compute_ate(estimate: &[Stamped], reference: &[Stamped]) -> Result<f64, EvalError> {
    let pairs = associate(estimate, reference);
    if pairs.is_empty() {
        return Err(EvalError::NoOverlap(MAX_TIME_DIFFERENCE));
    }
    let (r, t) = align_rigid(&pairs);
    let sse: f64 = pairs.iter().map(|(a, b)| (r * a + t - b).norm_squared()).sum();
    Ok((sse / pairs.len() as f64).sqrt())
}

/// RMSE over estimated points of the distance to the nearest ground-truth point.
pub fn compute_map_rmse(estimated: &PointCloud, ground_truth: &PointCloud) -> Result<f64, EvalError> {
    if estimated.is_empty() || ground_truth.is_empty() {
        return Err(EvalError::EmptyCloud);
    }
    let index = PointIndex::new(&ground_truth.points);
    let d2: Vec<f64> = estimated
        .points
        .par_iter()
        .map(|p| index.nearest(p).expect("index is non-empty").1)
        .collect();
    Ok((d2.iter().sum::<f64>() / d2.len() as f64).sqrt())
}
