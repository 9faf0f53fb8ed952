//! Room and floor layers of the situational graph.
//!
//! Rooms come from free-space clusters bounded by opposed wall pairs: two
//! pairs make a finite room, one pair an infinite room (a corridor). Floors
//! summarize the extent of all walls sharing a floor id.

mod floors;
mod rooms;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use floors::{detect_floor_change, update_floor, FloorEstimate, FloorRegistry};
pub use rooms::{
    associate_room, candidate_planes_for_cluster, compute_room_center_finite, compute_room_center_infinite,
    detect_rooms, facing_each_other, RoomCandidate,
};

use crate::geometry::{PlaneCategory, PlaneCoeffs};
use crate::graph::{FactorGraph, GraphError, VariableId, VariableKind};
use crate::perception::PlaneObservations;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SceneError {
    #[error("wall pair is not opposed")]
    NotOpposed,
    #[error("floor {0} needs at least one x-wall and one y-wall")]
    InsufficientWalls(u32),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    pub min_side: f64,
    pub max_side: f64,
    pub min_close_points: usize,
    /// Slack added to a vertex's clearance when testing wall points against it.
    pub vertex_point_tol: f64,
    pub recent_keyframes: u64,
    pub room_match_tol: f64,
    /// Largest coefficient distance at which two same-side walls are merged.
    pub merge_max_distance: f64,
    /// Largest coefficient distance at which a wall outside every room is
    /// merged into a matching room wall.
    pub stray_merge_distance: f64,
    pub pair_information: f64,
    /// Information of the free-coordinate prior, relative to `pair_information`.
    pub prior_relative_information: f64,
    pub floor_information: f64,
    pub floor_reanchor_distance: f64,
    pub floor_height_tol: f64,
    /// Stored inliers per plane used for the cluster test.
    pub max_plane_points: usize,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            min_side: 1.5,
            max_side: 15.0,
            min_close_points: 20,
            vertex_point_tol: 0.5,
            recent_keyframes: 3,
            room_match_tol: 2.0,
            merge_max_distance: 1.0,
            stray_merge_distance: 0.5,
            pair_information: 1.0,
            prior_relative_information: 1e-2,
            floor_information: 0.1,
            floor_reanchor_distance: 0.5,
            floor_height_tol: 1.5,
            max_plane_points: 1500,
        }
    }
}

/// A wall as seen by the room segmentor: current map estimate plus its
/// stored inliers at the current keyframe estimates.
#[derive(Clone, Debug, PartialEq)]
pub struct MappedPlane {
    pub id: VariableId,
    pub coeffs: PlaneCoeffs,
    pub category: PlaneCategory,
    pub floor: u32,
    pub points: Vec<Vector3<f64>>,
    /// Index of the latest keyframe that observed the plane.
    pub last_seen: u64,
}

/// Snapshot of every plane on `floor` with at least one stored observation.
pub fn mapped_planes(
    graph: &FactorGraph,
    observations: &PlaneObservations,
    floor: u32,
    max_points: usize,
) -> Vec<MappedPlane> {
    let mut out = Vec::new();
    for id in graph.ids_of_kind(VariableKind::Plane) {
        let p = graph.plane(id).expect("listed plane exists");
        if p.floor != floor {
            continue;
        }
        let Some(last_seen) = observations.last_seen(id) else {
            continue;
        };
        let mut points = observations.map_points(id, graph);
        if points.len() > max_points {
            let stride = points.len().div_ceil(max_points);
            points = points.into_iter().step_by(stride).collect();
        }
        out.push(MappedPlane {
            id,
            coeffs: p.coeffs,
            category: p.category,
            floor: p.floor,
            points,
            last_seen,
        });
    }
    out
}
