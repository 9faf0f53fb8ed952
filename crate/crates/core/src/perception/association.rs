use std::collections::BTreeMap;

use nalgebra::{Matrix4, Vector3};
use serde::{Deserialize, Serialize};

use super::{classify_plane, PerceptionError, SegmentedPlane};
use crate::graph::{Factor, FactorGraph, PlaneVar, PosePlaneFactor, Variable, VariableId, VariableKind};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AssociationConfig {
    /// Maximum l2 distance between `(n, d)` vectors for a match.
    pub plane_match_tol: f64,
    /// Pose-plane information per RANSAC inlier.
    pub info_per_inlier: f64,
    pub info_cap: f64,
    /// Inlier points kept per observation for room detection.
    pub max_track_points: usize,
}

impl Default for AssociationConfig {
    fn default() -> Self {
        Self {
            plane_match_tol: 0.35,
            info_per_inlier: 1.0,
            info_cap: 1000.0,
            max_track_points: 200,
        }
    }
}

/// Maps one segmented plane into the graph and attaches a pose-plane factor.
///
/// Map planes keep the orientation they had when first seen (their positive
/// side faces the observer), so the two faces of a thin wall stay distinct.
/// A match needs the same category, floor and facing, and the smallest
/// coefficient distance below the tolerance; otherwise a new plane is created.
pub fn associate_and_map_plane(
    graph: &mut FactorGraph,
    keyframe: VariableId,
    observed: &SegmentedPlane,
    cfg: &AssociationConfig,
) -> Result<VariableId, PerceptionError> {
    let kf = graph
        .keyframe(keyframe)
        .map_err(|_| PerceptionError::UnknownKeyframe(keyframe))?;
    let floor = kf.floor;
    let in_map = observed.coeffs.transformed_to_map(&kf.pose);
    let category = classify_plane(&in_map);

    let mut best: Option<(f64, VariableId)> = None;
    for id in graph.ids_of_kind(VariableKind::Plane) {
        let p = graph.plane(id).expect("listed plane exists");
        if p.category != category || p.floor != floor || p.coeffs.normal.dot(&in_map.normal) <= 0.0 {
            continue;
        }
        let dist = (p.coeffs.to_vector() - in_map.to_vector()).norm();
        if dist < cfg.plane_match_tol && best.is_none_or(|(b, _)| dist < b) {
            best = Some((dist, id));
        }
    }
    let plane = match best {
        Some((_, id)) => id,
        None => graph.add_variable(Variable::Plane(PlaneVar {
            coeffs: in_map,
            category,
            floor,
        })),
    };
    let weight = (cfg.info_per_inlier * observed.inlier_count() as f64).min(cfg.info_cap);
    graph
        .add_factor(Factor::PosePlane(PosePlaneFactor {
            keyframe,
            plane,
            observed: observed.coeffs,
            information: Matrix4::identity() * weight,
        }))
        .expect("keyframe and plane ids were just validated");
    Ok(plane)
}

/// Inlier points of one plane observation, in the observing sensor frame.
#[derive(Clone, Debug, PartialEq)]
pub struct PlaneTrack {
    pub keyframe: VariableId,
    pub points: Vec<Vector3<f64>>,
}

/// Per-plane observation history, kept beside the graph so that room
/// detection can reason about wall extents at the current pose estimates.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PlaneObservations {
    tracks: BTreeMap<VariableId, Vec<PlaneTrack>>,
}

impl PlaneObservations {
    pub fn new() -> Self {
        Self::default()
    }

    /// Stores up to `max_points` of `points`, evenly strided.
    pub fn record(&mut self, plane: VariableId, keyframe: VariableId, points: &[Vector3<f64>], max_points: usize) {
        let stride = points.len().div_ceil(max_points.max(1)).max(1);
        let kept = points.iter().step_by(stride).copied().collect();
        self.tracks
            .entry(plane)
            .or_default()
            .push(PlaneTrack { keyframe, points: kept });
    }

    pub fn merge(&mut self, duplicate: VariableId, survivor: VariableId) {
        if let Some(mut t) = self.tracks.remove(&duplicate) {
            let dst = self.tracks.entry(survivor).or_default();
            dst.append(&mut t);
            dst.sort_by_key(|t| t.keyframe);
        }
    }

    pub fn tracks(&self, plane: VariableId) -> &[PlaneTrack] {
        self.tracks.get(&plane).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn planes(&self) -> impl Iterator<Item = VariableId> + '_ {
        self.tracks.keys().copied()
    }

    /// Latest observing keyframe index of a plane.
    pub fn last_seen(&self, plane: VariableId) -> Option<u64> {
        self.tracks(plane).iter().map(|t| t.keyframe.index).max()
    }

    /// All stored inliers of `plane` projected with the current keyframe estimates.
    pub fn map_points(&self, plane: VariableId, graph: &FactorGraph) -> Vec<Vector3<f64>> {
        let mut out = Vec::new();
        for t in self.tracks(plane) {
            if let Ok(kf) = graph.keyframe(t.keyframe) {
                out.extend(t.points.iter().map(|p| kf.pose.transform_point(p)));
            }
        }
        out
    }
}
