use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::PointCloud;
use crate::geometry::{Frame, PlaneCategory, PlaneCoeffs};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SegmentationConfig {
    pub ransac_iterations: usize,
    pub ransac_threshold: f64,
    pub min_inliers: usize,
    pub max_planes: usize,
    pub seed: u64,
}

impl Default for SegmentationConfig {
    fn default() -> Self {
        Self {
            ransac_iterations: 200,
            ransac_threshold: 0.05,
            min_inliers: 100,
            max_planes: 12,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SegmentedPlane {
    /// Sensor-frame plane, oriented so the sensor origin is on the positive side.
    pub coeffs: PlaneCoeffs,
    /// Indices into the segmented cloud.
    pub inliers: Vec<usize>,
    pub centroid: Vector3<f64>,
}

impl SegmentedPlane {
    pub fn inlier_count(&self) -> usize {
        self.inliers.len()
    }
}

/// Wall orientation by dominant normal component; vertical wins ties.
pub fn classify_plane(coeffs: &PlaneCoeffs) -> PlaneCategory {
    let n = coeffs.normal.map(f64::abs);
    if n.x.max(n.y) >= n.z {
        if n.x >= n.y {
            PlaneCategory::XVertical
        } else {
            PlaneCategory::YVertical
        }
    } else {
        PlaneCategory::Horizontal
    }
}

/// Least-squares plane through `points`: centroid plus the eigenvector of the
/// smallest covariance eigenvalue. `None` for fewer than three points.
pub fn fit_plane<'a, I>(points: I, frame: Frame) -> Option<(PlaneCoeffs, Vector3<f64>)>
where
    I: IntoIterator<Item = &'a Vector3<f64>> + Clone,
{
    let mut n = 0usize;
    let mut centroid = Vector3::zeros();
    for p in points.clone() {
        centroid += p;
        n += 1;
    }
    if n < 3 {
        return None;
    }
    centroid /= n as f64;
    let mut cov = Matrix3::zeros();
    for p in points {
        let q = p - centroid;
        cov += q * q.transpose();
    }
    let eig = SymmetricEigen::new(cov);
    let (imin, _) = eig.eigenvalues.iter().enumerate().fold(
        (0, f64::INFINITY),
        |best, (i, &v)| if v < best.1 { (i, v) } else { best },
    );
    let normal: Vector3<f64> = eig.eigenvectors.column(imin).into_owned();
    if !normal.iter().all(|v| v.is_finite()) || normal.norm() < 0.5 {
        return None;
    }
    Some((PlaneCoeffs::through_point(normal, &centroid, frame), centroid))
}

fn plane_from_sample(a: &Vector3<f64>, b: &Vector3<f64>, c: &Vector3<f64>) -> Option<PlaneCoeffs> {
    let n = (b - a).cross(&(c - a));
    if n.norm() < 1e-9 {
        return None;
    }
    Some(PlaneCoeffs::through_point(n, a, Frame::Sensor))
}

fn inliers_of(plane: &PlaneCoeffs, pts: &[Vector3<f64>], remaining: &[usize], threshold: f64) -> Vec<usize> {
    remaining
        .iter()
        .copied()
        .filter(|&i| plane.signed_distance(&pts[i]).abs() <= threshold)
        .collect()
}

/// Refits on the inliers whose residual is within three robust sigmas, so
/// points of an adjacent surface that fall inside the RANSAC band (a wall
/// foot next to the floor) do not tilt the plane.
fn robust_refit(mut fit: PlaneCoeffs, pts: &[Vector3<f64>], inliers: &[usize]) -> PlaneCoeffs {
    for _ in 0..3 {
        let mut res: Vec<f64> = inliers.iter().map(|&i| fit.signed_distance(&pts[i]).abs()).collect();
        let mid = res.len() / 2;
        let median = *res.select_nth_unstable_by(mid, f64::total_cmp).1;
        let gate = (3.0 * 1.4826 * median).max(1e-9);
        let core = inliers
            .iter()
            .map(|&i| &pts[i])
            .filter(|p| fit.signed_distance(p).abs() <= gate);
        let Some((next, _)) = fit_plane(core, Frame::Sensor) else {
            break;
        };
        fit = next;
    }
    fit
}

/// Sequential RANSAC: extract the best-supported plane, refine it on its
/// inliers, remove them, repeat. Inlier sets of the result are disjoint.
pub fn segment_planes(cloud: &PointCloud, cfg: &SegmentationConfig) -> Vec<SegmentedPlane> {
    let pts = &cloud.points;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut remaining: Vec<usize> = (0..pts.len()).collect();
    let mut out = Vec::new();

    while out.len() < cfg.max_planes && remaining.len() >= cfg.min_inliers.max(3) {
        let mut best: Option<(usize, PlaneCoeffs)> = None;
        for _ in 0..cfg.ransac_iterations {
            let n = remaining.len();
            let i = remaining[rng.random_range(0..n)];
            let j = remaining[rng.random_range(0..n)];
            let k = remaining[rng.random_range(0..n)];
            if i == j || j == k || i == k {
                continue;
            }
            let Some(plane) = plane_from_sample(&pts[i], &pts[j], &pts[k]) else {
                continue;
            };
            let count = remaining
                .iter()
                .filter(|&&r| plane.signed_distance(&pts[r]).abs() <= cfg.ransac_threshold)
                .count();
            if best.as_ref().is_none_or(|(c, _)| count > *c) {
                best = Some((count, plane));
            }
        }
        let Some((count, plane)) = best else { break };
        if count < cfg.min_inliers {
            break;
        }

        let mut inliers = inliers_of(&plane, pts, &remaining, cfg.ransac_threshold);
        let mut refined = None;
        for _ in 0..2 {
            let Some((fit, centroid)) = fit_plane(inliers.iter().map(|&i| &pts[i]), Frame::Sensor) else {
                break;
            };
            let next = inliers_of(&fit, pts, &remaining, cfg.ransac_threshold);
            if next.len() < 3 {
                break;
            }
            refined = Some((fit, centroid));
            inliers = next;
        }
        let Some((fit, _)) = refined else { break };
        let fit = robust_refit(fit, pts, &inliers);
        let inliers = inliers_of(&fit, pts, &remaining, cfg.ransac_threshold);
        // the final inlier set was selected against `fit`; report its centroid
        let centroid = inliers.iter().map(|&i| pts[i]).sum::<Vector3<f64>>() / inliers.len() as f64;
        if inliers.len() < cfg.min_inliers {
            break;
        }

        let keep: std::collections::HashSet<usize> = inliers.iter().copied().collect();
        remaining.retain(|i| !keep.contains(i));
        out.push(SegmentedPlane {
            coeffs: fit.facing(&Vector3::zeros()),
            inliers,
            centroid,
        });
    }
    out
}
