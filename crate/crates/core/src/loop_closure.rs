//! Revisit detection by keyframe proximity, verified by point-to-plane ICP.

use std::collections::BTreeMap;

use nalgebra::{Matrix2, Matrix3, Matrix6, SymmetricEigen, Vector3, Vector6};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{so3_exp, Pose};
use crate::graph::{BetweenFactor, Factor, FactorGraph, FactorId, VariableId, VariableKind};
use crate::perception::PointCloud;
use crate::spatial::PointIndex;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LoopError {
    #[error("{found} correspondences, need {needed}")]
    InsufficientOverlap { found: usize, needed: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IcpConfig {
    pub max_iterations: usize,
    pub max_correspondence: f64,
    pub min_correspondences: usize,
    pub normal_neighbors: usize,
    /// Largest surface variation `λ0 / (λ0 + λ1 + λ2)` of a neighborhood;
    /// rougher ones (corners, edges) get no normal and are not matched.
    pub max_curvature: f64,
    /// Smallest ratio of the middle to the largest neighborhood eigenvalue.
    pub min_spread_ratio: f64,
    /// Floor of the robust residual gate, m. Floor and ceiling pairs have
    /// near-zero residuals under a horizontal offset and pull the median
    /// down, so the floor must exceed the offsets the matcher should recover.
    pub min_residual_gate: f64,
    /// Residual scale of the Huber weight in each Gauss-Newton step.
    pub huber_delta: f64,
    /// Largest angle between paired source and target normals.
    pub max_normal_angle_deg: f64,
    /// Smallest fraction of source points that must find a correspondence.
    pub min_overlap: f64,
    /// Update norm below which the iteration stops.
    pub convergence: f64,
    /// Eigendirections of the step's normal equations with less than this
    /// fraction of the largest eigenvalue are not updated.
    pub min_information_ratio: f64,
    /// Times a step that raises the fitness is halved before giving up.
    pub max_step_halvings: usize,
}

impl Default for IcpConfig {
    fn default() -> Self {
        Self {
            max_iterations: 30,
            max_correspondence: 1.0,
            min_correspondences: 50,
            normal_neighbors: 20,
            max_curvature: 0.01,
            min_spread_ratio: 0.05,
            min_residual_gate: 0.5,
            huber_delta: 0.05,
            max_normal_angle_deg: 30.0,
            min_overlap: 0.3,
            convergence: 1e-9,
            min_information_ratio: 1e-2,
            max_step_halvings: 4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LoopConfig {
    pub min_index_gap: u64,
    pub search_radius: f64,
    pub max_candidates: usize,
    /// Mean squared point-to-plane residual accepted for a loop, m².
    pub fitness_accept: f64,
    /// Smallest horizontal conditioning of an accepted match.
    pub min_conditioning: f64,
    pub icp: IcpConfig,
}

impl Default for LoopConfig {
    fn default() -> Self {
        Self {
            min_index_gap: 20,
            search_radius: 5.0,
            max_candidates: 3,
            fitness_accept: 0.05,
            min_conditioning: 0.1,
            icp: IcpConfig {
                min_overlap: 0.5,
                ..IcpConfig::default()
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LoopCandidate {
    pub query: VariableId,
    pub matched: VariableId,
    /// Pose of the query keyframe in the matched keyframe's frame.
    pub relative: Pose,
    pub fitness: f64,
}

/// Earlier keyframes on the same floor within the search radius, nearest
/// first; ties break on the lower index.
pub fn find_candidates(graph: &FactorGraph, query: VariableId, cfg: &LoopConfig) -> Vec<VariableId> {
    let Ok(q) = graph.keyframe(query) else {
        return Vec::new();
    };
    let mut found: Vec<(f64, VariableId)> = graph
        .ids_of_kind(VariableKind::Keyframe)
        .into_iter()
        .filter(|id| id.index + cfg.min_index_gap <= query.index)
        .filter_map(|id| {
            let k = graph.keyframe(id).ok()?;
            let d = (k.pose.translation - q.pose.translation).norm();
            (k.floor == q.floor && d <= cfg.search_radius).then_some((d, id))
        })
        .collect();
    found.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    found.into_iter().take(cfg.max_candidates).map(|(_, id)| id).collect()
}

/// Normal of the neighborhood, oriented toward the origin. Neighborhoods
/// that are not planar (corners) or not two-dimensional (points along one
/// scan ring) yield none.
fn estimate_normal<'a>(
    p: &Vector3<f64>,
    neighbors: impl Iterator<Item = &'a Vector3<f64>> + Clone,
    cfg: &IcpConfig,
) -> Option<Vector3<f64>> {
    let n = neighbors.clone().count() as f64;
    let mean = neighbors.clone().fold(Vector3::zeros(), |a, q| a + q) / n;
    let cov = neighbors.fold(Matrix3::zeros(), |a, q| a + (q - mean) * (q - mean).transpose()) / n;
    let eig = SymmetricEigen::new(cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let (l0, l1, l2) = (
        eig.eigenvalues[order[0]].max(0.0),
        eig.eigenvalues[order[1]],
        eig.eigenvalues[order[2]],
    );
    if l0 > cfg.max_curvature * (l0 + l1 + l2) || l1 < cfg.min_spread_ratio * l2 {
        return None;
    }
    let normal: Vector3<f64> = eig.eigenvectors.column(order[0]).into_owned();
    Some(if normal.dot(p) > 0.0 { -normal } else { normal })
}

/// Cloud with per-point normals from a k-nearest-neighbor plane fit,
/// oriented toward the sensor at the cloud origin.
pub struct IcpCloud {
    points: Vec<Vector3<f64>>,
    normals: Vec<Option<Vector3<f64>>>,
    index: PointIndex,
}

impl IcpCloud {
    pub fn new(cloud: &PointCloud, cfg: &IcpConfig) -> Self {
        let index = PointIndex::new(&cloud.points);
        let normals = cloud
            .points
            .iter()
            .map(|p| {
                let nn = index.nearest_n(p, cfg.normal_neighbors);
                if nn.len() < 3 {
                    return None;
                }
                estimate_normal(p, nn.iter().map(|(i, _)| &cloud.points[*i]), cfg)
            })
            .collect();
        Self {
            points: cloud.points.clone(),
            normals,
            index,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Point-to-plane residuals `(q, n, r)` of the transformed source. Pairs
    /// farther than `cutoff` or with normals more than the angular gate apart
    /// are dropped, which keeps the two faces of a thin wall apart.
    fn correspondences(&self, source: &IcpCloud, t: &Pose, cfg: &IcpConfig) -> Vec<(Vector3<f64>, Vector3<f64>, f64)> {
        let r = t.rotation_matrix();
        let min_cos = cfg.max_normal_angle_deg.to_radians().cos();
        source
            .points
            .iter()
            .zip(&source.normals)
            .filter_map(|(p, ns)| {
                let ns = r * (*ns)?;
                let q = t.transform_point(p);
                let (j, d2) = self.index.nearest(&q)?;
                if d2 > cfg.max_correspondence * cfg.max_correspondence {
                    return None;
                }
                let n = self.normals[j]?;
                if n.dot(&ns) < min_cos {
                    return None;
                }
                Some((q, n, n.dot(&(q - self.points[j]))))
            })
            .collect()
    }
}

fn fitness_of(c: &[(Vector3<f64>, Vector3<f64>, f64)]) -> f64 {
    if c.is_empty() {
        return f64::INFINITY;
    }
    c.iter().map(|(_, _, r)| r * r).sum::<f64>() / c.len() as f64
}

/// Refines `init` so that `pose · source ≈ target`. Gauss-Newton steps use a
/// left perturbation `Exp(δ) · T`; a step is kept only if the fitness does not
/// increase, so the accepted fitness sequence is non-increasing.
pub fn scan_match(
    source: &PointCloud,
    target: &PointCloud,
    init: &Pose,
    cfg: &IcpConfig,
) -> Result<(Pose, f64), LoopError> {
    scan_match_prepared(&IcpCloud::new(source, cfg), &IcpCloud::new(target, cfg), init, cfg)
        .map(|r| (r.pose, r.fitness))
}

#[derive(Clone, Debug, PartialEq)]
pub struct IcpResult {
    pub pose: Pose,
    pub fitness: f64,
    pub correspondences: usize,
    /// Smallest over largest eigenvalue of the horizontal translational
    /// normal equations; near zero when walls leave a direction unconstrained.
    pub conditioning: f64,
}

fn translational_conditioning(corr: &[(Vector3<f64>, Vector3<f64>, f64)]) -> f64 {
    let h = corr
        .iter()
        .fold(Matrix2::zeros(), |a, (_, n, _)| a + n.xy() * n.xy().transpose());
    let ev = h.symmetric_eigenvalues();
    let (lo, hi) = (ev.min(), ev.max());
    if hi <= 0.0 {
        0.0
    } else {
        lo.max(0.0) / hi
    }
}

/// Gauss-Newton step restricted to the well-observed eigendirections of `h`.
/// Directions whose information is below `min_ratio` of the largest (height
/// when the floor has no usable normals, the axis of a corridor) keep their
/// current value instead of drifting on noise.
fn observable_step(h: &Matrix6<f64>, g: &Vector6<f64>, min_ratio: f64) -> Option<Vector6<f64>> {
    let eig = h.symmetric_eigen();
    let top = eig.eigenvalues.max();
    if top.is_nan() || top <= 0.0 {
        return None;
    }
    let mut delta = Vector6::zeros();
    for (i, &l) in eig.eigenvalues.iter().enumerate() {
        if l > min_ratio * top {
            let v = eig.eigenvectors.column(i);
            delta -= v * (v.dot(g) / l);
        }
    }
    Some(delta)
}

pub fn scan_match_prepared(
    source: &IcpCloud,
    target: &IcpCloud,
    init: &Pose,
    cfg: &IcpConfig,
) -> Result<IcpResult, LoopError> {
    let mut pose = *init;
    let mut corr = target.correspondences(source, &pose, cfg);
    let mut fitness = fitness_of(&corr);
    for _ in 0..cfg.max_iterations {
        if corr.len() < 6 {
            break;
        }
        // residuals beyond three robust sigmas (and the gate floor) are left out of the step
        let mut abs: Vec<f64> = corr.iter().map(|c| c.2.abs()).collect();
        let mid = abs.len() / 2;
        let median = *abs.select_nth_unstable_by(mid, f64::total_cmp).1;
        let gate = (3.0 * 1.4826 * median).max(cfg.min_residual_gate);
        let mut h = Matrix6::zeros();
        let mut g = Vector6::zeros();
        for (q, n, r) in corr.iter().filter(|c| c.2.abs() <= gate) {
            let w = q.cross(n);
            let j = Vector6::new(w.x, w.y, w.z, n.x, n.y, n.z);
            let w = (cfg.huber_delta / r.abs()).min(1.0);
            h += w * j * j.transpose();
            g += w * j * *r;
        }
        let Some(mut delta) = observable_step(&h, &g, cfg.min_information_ratio) else {
            break;
        };
        // halve the step until the fitness does not increase
        let accepted = (0..=cfg.max_step_halvings).find_map(|k| {
            if k > 0 {
                delta *= 0.5;
            }
            let omega = Vector3::new(delta[0], delta[1], delta[2]);
            let v = Vector3::new(delta[3], delta[4], delta[5]);
            let next = Pose::new(so3_exp(&omega), v).compose(&pose);
            let next_corr = target.correspondences(source, &next, cfg);
            let next_fitness = fitness_of(&next_corr);
            (next_fitness <= fitness).then_some((next, next_corr, next_fitness))
        });
        let Some((next, next_corr, next_fitness)) = accepted else {
            break;
        };
        pose = next;
        corr = next_corr;
        fitness = next_fitness;
        if delta.norm() < cfg.convergence {
            break;
        }
    }
    let needed = cfg
        .min_correspondences
        .max((cfg.min_overlap * source.len() as f64).ceil() as usize);
    if corr.len() < needed {
        return Err(LoopError::InsufficientOverlap {
            found: corr.len(),
            needed,
        });
    }
    Ok(IcpResult {
        pose,
        fitness,
        correspondences: corr.len(),
        conditioning: translational_conditioning(&corr),
    })
}

/// Pure verification step: matches the query cloud against each candidate
/// (in parallel when allowed) and returns the first accepted one in
/// candidate order.
pub fn verify_candidates(
    graph: &FactorGraph,
    clouds: &BTreeMap<VariableId, PointCloud>,
    query: VariableId,
    candidates: &[VariableId],
    cfg: &LoopConfig,
    parallel: bool,
) -> Option<LoopCandidate> {
    let q = graph.keyframe(query).ok()?;
    let source = clouds.get(&query)?;
    let attempt = |c: &VariableId| -> Option<LoopCandidate> {
        let k = graph.keyframe(*c).ok()?;
        let target = clouds.get(c)?;
        if source.is_empty() || target.is_empty() {
            return None;
        }
        let init = k.pose.between(&q.pose);
        let r = scan_match_prepared(
            &IcpCloud::new(source, &cfg.icp),
            &IcpCloud::new(target, &cfg.icp),
            &init,
            &cfg.icp,
        )
        .ok()?;
        let (relative, fitness) = (r.pose, r.fitness);
        (fitness <= cfg.fitness_accept && r.conditioning >= cfg.min_conditioning).then_some(LoopCandidate {
            query,
            matched: *c,
            relative,
            fitness,
        })
    };
    let results: Vec<Option<LoopCandidate>> = if parallel {
        candidates.par_iter().map(attempt).collect()
    } else {
        candidates.iter().map(attempt).collect()
    };
    results.into_iter().flatten().next()
}

/// Adds at most one loop factor for `query`, from the matched keyframe to the query.
pub fn try_close_loop(
    graph: &mut FactorGraph,
    clouds: &BTreeMap<VariableId, PointCloud>,
    query: VariableId,
    information: &Matrix6<f64>,
    cfg: &LoopConfig,
    parallel: bool,
) -> Option<FactorId> {
    let candidates = find_candidates(graph, query, cfg);
    let found = verify_candidates(graph, clouds, query, &candidates, cfg, parallel)?;
    add_loop_factor(graph, &found, information)
}

pub fn add_loop_factor(graph: &mut FactorGraph, found: &LoopCandidate, information: &Matrix6<f64>) -> Option<FactorId> {
    graph
        .add_factor(Factor::Loop(BetweenFactor {
            from: found.matched,
            to: found.query,
            measurement: found.relative,
            information: *information,
        }))
        .ok()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{KeyframeVar, Variable};

    fn room_cloud() -> PointCloud {
        // three orthogonal wall patches plus a floor
        let mut pts = Vec::new();
        for i in 0..30 {
            for j in 0..20 {
                let (a, b) = (i as f64 * 0.1, j as f64 * 0.1);
                pts.push(Vector3::new(3.0, a - 1.5, b - 1.0));
                pts.push(Vector3::new(a - 1.5, 2.0, b - 1.0));
                pts.push(Vector3::new(-2.5, a - 1.5, b - 1.0));
                pts.push(Vector3::new(a - 1.5, b - 1.0, -1.0));
            }
        }
        PointCloud::new(pts)
    }

    #[test]
    fn identical_clouds_match_at_identity() {
        let c = room_cloud();
        let (t, fit) = scan_match(&c, &c, &Pose::identity(), &IcpConfig::default()).unwrap();
        assert!(t.log().norm() < 1e-6);
        assert!(fit < 1e-12);
    }

    #[test]
    fn recovers_translation() {
        let target = room_cloud();
        let shift = Pose::from_translation(0.3, 0.0, 0.0);
        let source = target.transformed(&shift.inverse());
        let (t, _) = scan_match(&source, &target, &Pose::identity(), &IcpConfig::default()).unwrap();
        assert!((t.translation - shift.translation).norm() < 1e-3);
    }

    #[test]
    fn disjoint_clouds_fail() {
        let a = room_cloud();
        let b = a.transformed(&Pose::from_translation(100.0, 0.0, 0.0));
        assert!(matches!(
            scan_match(&a, &b, &Pose::identity(), &IcpConfig::default()),
            Err(LoopError::InsufficientOverlap { .. })
        ));
    }

    #[test]
    fn candidates_respect_gap_and_radius() {
        let mut g = FactorGraph::new();
        for i in 0..30 {
            let x = if i < 25 { i as f64 } else { 30.0 - i as f64 };
            g.add_variable(Variable::Keyframe(KeyframeVar {
                pose: Pose::from_translation(x, 0.0, 0.0),
                timestamp: i as f64,
                floor: 0,
            }));
        }
        let cfg = LoopConfig::default();
        let kf = |i| VariableId::new(VariableKind::Keyframe, i);
        // keyframe 29 sits at x = 1: keyframes 0..=6 are in range, only 0..=9 pass the gap
        assert_eq!(find_candidates(&g, kf(29), &cfg), vec![kf(1), kf(0), kf(2)]);
        assert!(find_candidates(&g, kf(10), &cfg).is_empty());
    }
}
