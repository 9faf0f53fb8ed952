use std::collections::BTreeSet;

use nalgebra::Vector2;

use super::{MappedPlane, SceneConfig, SceneError};
use crate::freespace::Cluster;
use crate::geometry::{Axis, PlaneCoeffs};
use crate::graph::{
    planes_opposed, Factor, FactorGraph, FactorKind, RoomKind, RoomPlanePairFactor, RoomPriorFactor, RoomVar, Variable,
    VariableId, VariableKind,
};
use crate::perception::PlaneObservations;

#[derive(Clone, Debug, PartialEq)]
pub struct RoomCandidate {
    pub kind: RoomKind,
    pub center: Vector2<f64>,
    /// Wall pairs, lower id first.
    pub x_pair: Option<[VariableId; 2]>,
    pub y_pair: Option<[VariableId; 2]>,
    /// Constrained axis of an infinite candidate.
    pub axis: Option<Axis>,
    /// Index of the source cluster.
    pub cluster: usize,
}

impl RoomCandidate {
    pub fn pair(&self, axis: Axis) -> Option<[VariableId; 2]> {
        match axis {
            Axis::X => self.x_pair,
            Axis::Y => self.y_pair,
        }
    }

    pub fn planes(&self) -> Vec<VariableId> {
        self.x_pair
            .iter()
            .chain(self.y_pair.iter())
            .flatten()
            .copied()
            .collect()
    }
}

/// Opposed within the angular tolerance and each on the other's positive side.
pub fn facing_each_other(a: &PlaneCoeffs, b: &PlaneCoeffs) -> bool {
    planes_opposed(a, b) && a.signed_distance(&b.closest_point()) > 0.0 && b.signed_distance(&a.closest_point()) > 0.0
}

fn midpoint(a: &PlaneCoeffs, b: &PlaneCoeffs, axis: Axis) -> f64 {
    let i = axis.index();
    0.5 * (a.closest_point()[i] + b.closest_point()[i])
}

pub fn compute_room_center_finite(
    x_pair: [&PlaneCoeffs; 2],
    y_pair: [&PlaneCoeffs; 2],
) -> Result<Vector2<f64>, SceneError> {
    if !planes_opposed(x_pair[0], x_pair[1]) || !planes_opposed(y_pair[0], y_pair[1]) {
        return Err(SceneError::NotOpposed);
    }
    Ok(Vector2::new(
        midpoint(x_pair[0], x_pair[1], Axis::X),
        midpoint(y_pair[0], y_pair[1], Axis::Y),
    ))
}

/// Pair midpoint on `axis`; the other coordinate comes from the cluster centroid.
pub fn compute_room_center_infinite(
    pair: [&PlaneCoeffs; 2],
    axis: Axis,
    cluster_centroid: &Vector2<f64>,
) -> Result<Vector2<f64>, SceneError> {
    if !planes_opposed(pair[0], pair[1]) {
        return Err(SceneError::NotOpposed);
    }
    let mut c = *cluster_centroid;
    c[axis.index()] = midpoint(pair[0], pair[1], axis);
    Ok(c)
}

/// Recently observed walls with enough inliers near the cluster.
///
/// A point counts as near when it lies within a vertex's clearance plus
/// `vertex_point_tol`: cluster vertices all keep at least the disconnect
/// clearance from every wall, so a bare distance tolerance below that
/// clearance could never be met.
pub fn candidate_planes_for_cluster(
    cluster: &Cluster,
    planes: &[MappedPlane],
    latest_keyframe: u64,
    cfg: &SceneConfig,
) -> Vec<VariableId> {
    if cluster.positions.is_empty() {
        return Vec::new();
    }
    let reach: Vec<f64> = cluster.clearances.iter().map(|c| c + cfg.vertex_point_tol).collect();
    let mut lo = Vector2::repeat(f64::INFINITY);
    let mut hi = Vector2::repeat(f64::NEG_INFINITY);
    for (v, r) in cluster.positions.iter().zip(&reach) {
        lo = lo.inf(&(v - Vector2::repeat(*r)));
        hi = hi.sup(&(v + Vector2::repeat(*r)));
    }
    let mut out = Vec::new();
    for p in planes {
        if p.category.axis().is_none() || p.last_seen + cfg.recent_keyframes <= latest_keyframe {
            continue;
        }
        let mut close = 0;
        for q in &p.points {
            let q = q.xy();
            if q.x < lo.x || q.y < lo.y || q.x > hi.x || q.y > hi.y {
                continue;
            }
            if cluster
                .positions
                .iter()
                .zip(&reach)
                .any(|(v, r)| (q - v).norm_squared() <= r * r)
            {
                close += 1;
                if close >= cfg.min_close_points {
                    break;
                }
            }
        }
        if close >= cfg.min_close_points {
            out.push(p.id);
        }
    }
    out
}

fn best_pair(
    ids: &[VariableId],
    planes: &[MappedPlane],
    axis: Axis,
    centroid: &Vector2<f64>,
    cfg: &SceneConfig,
) -> Option<[VariableId; 2]> {
    let walls: Vec<&MappedPlane> = ids
        .iter()
        .filter_map(|id| planes.iter().find(|p| p.id == *id))
        .filter(|p| p.category.axis() == Some(axis))
        .collect();
    let i = axis.index();
    let mut best: Option<(f64, [VariableId; 2])> = None;
    for (k, a) in walls.iter().enumerate() {
        for b in &walls[k + 1..] {
            if !facing_each_other(&a.coeffs, &b.coeffs) {
                continue;
            }
            let (ca, cb) = (a.coeffs.closest_point()[i], b.coeffs.closest_point()[i]);
            let width = (ca - cb).abs();
            let inside = ca.min(cb) < centroid[i] && centroid[i] < ca.max(cb);
            if width < cfg.min_side || width > cfg.max_side || !inside {
                continue;
            }
            if best.is_none_or(|(w, _)| width > w) {
                best = Some((width, [a.id.min(b.id), a.id.max(b.id)]));
            }
        }
    }
    best.map(|(_, p)| p)
}

/// One candidate per cluster bounded by at least one opposed wall pair.
pub fn detect_rooms(
    clusters: &[Cluster],
    planes: &[MappedPlane],
    latest_keyframe: u64,
    cfg: &SceneConfig,
) -> Vec<RoomCandidate> {
    let coeffs = |id: VariableId| &planes.iter().find(|p| p.id == id).expect("candidate plane").coeffs;
    let mut out = Vec::new();
    for (ci, cluster) in clusters.iter().enumerate() {
        let ids = candidate_planes_for_cluster(cluster, planes, latest_keyframe, cfg);
        let xp = best_pair(&ids, planes, Axis::X, &cluster.centroid, cfg);
        let yp = best_pair(&ids, planes, Axis::Y, &cluster.centroid, cfg);
        let cand = match (xp, yp) {
            (Some(x), Some(y)) => RoomCandidate {
                kind: RoomKind::Finite,
                center: compute_room_center_finite([coeffs(x[0]), coeffs(x[1])], [coeffs(y[0]), coeffs(y[1])])
                    .expect("pairs were checked"),
                x_pair: Some(x),
                y_pair: Some(y),
                axis: None,
                cluster: ci,
            },
            (Some(p), None) | (None, Some(p)) => {
                let axis = if xp.is_some() { Axis::X } else { Axis::Y };
                RoomCandidate {
                    kind: RoomKind::Infinite,
                    center: compute_room_center_infinite([coeffs(p[0]), coeffs(p[1])], axis, &cluster.centroid)
                        .expect("pair was checked"),
                    x_pair: xp,
                    y_pair: yp,
                    axis: Some(axis),
                    cluster: ci,
                }
            }
            (None, None) => continue,
        };
        out.push(cand);
    }
    out
}

/// Whether `value` lies between the closest-point coordinates of a wall pair.
fn within_pair(g: &FactorGraph, pair: Option<[VariableId; 2]>, axis: Axis, value: f64) -> bool {
    let Some([a, b]) = pair else { return true };
    let i = axis.index();
    let (Ok(a), Ok(b)) = (g.plane(a), g.plane(b)) else {
        return false;
    };
    let (ca, cb) = (a.coeffs.closest_point()[i], b.coeffs.closest_point()[i]);
    ca.min(cb) < value && value < ca.max(cb)
}

fn nearest_room<F>(g: &FactorGraph, tol: f64, mut score: F) -> Option<VariableId>
where
    F: FnMut(VariableId, &RoomVar) -> Option<f64>,
{
    let mut best: Option<(f64, VariableId)> = None;
    for id in g.ids_of_kind(VariableKind::Room) {
        let r = g.room(id).expect("listed room exists");
        if let Some(d) = score(id, r) {
            if d < tol && best.is_none_or(|(b, _)| d < b) {
                best = Some((d, id));
            }
        }
    }
    best.map(|(_, id)| id)
}

fn add_pair_factor(
    g: &mut FactorGraph,
    room: VariableId,
    pair: [VariableId; 2],
    axis: Axis,
    cfg: &SceneConfig,
) -> Result<(), SceneError> {
    g.add_factor(Factor::RoomPlanePair(RoomPlanePairFactor {
        room,
        planes: pair,
        axis,
        information: cfg.pair_information,
    }))?;
    Ok(())
}

/// Reconciles the stored wall pair of `room` on `axis` with a re-detected
/// pair, merging same-facing duplicates into the lower id.
fn reconcile_side(
    g: &mut FactorGraph,
    obs: &mut PlaneObservations,
    room: VariableId,
    axis: Axis,
    detected: [VariableId; 2],
    cfg: &SceneConfig,
    merged: &mut Vec<VariableId>,
) -> Result<(), SceneError> {
    if g.room(room)?.planes(axis).is_none() {
        *g.room_mut(room)?.planes_mut(axis) = Some(detected);
        return add_pair_factor(g, room, detected, axis, cfg);
    }
    for c in detected {
        if g.variable(c).is_none() {
            continue;
        }
        let cc = g.plane(c)?.coeffs;
        // re-read each time: a merge renames the stored pair
        let stored = g.room(room)?.planes(axis).expect("checked above");
        let mut side = None;
        for s in stored {
            if g.plane(s)?.coeffs.normal.dot(&cc.normal) > 0.0 {
                side = Some(s);
            }
        }
        let Some(s) = side else { continue };
        if s == c || g.plane(s)?.coeffs.coefficient_distance(&cc) > cfg.merge_max_distance {
            continue;
        }
        let (survivor, duplicate) = (s.min(c), s.max(c));
        g.merge_variable(duplicate, survivor)?;
        obs.merge(duplicate, survivor);
        merged.push(duplicate);
    }
    Ok(())
}

fn set_prior(g: &mut FactorGraph, room: VariableId, measurement: f64) {
    for fid in g.factors_of(room) {
        if let Some(Factor::RoomPrior(p)) = g.factor_mut(fid) {
            p.measurement = measurement;
        }
    }
}

/// Matches a candidate to an existing room or creates a new one.
///
/// Finite candidates match finite rooms by center distance, then upgrade an
/// infinite room in place. Infinite candidates are absorbed by a finite room
/// whose extent contains them, else match infinite rooms on the same axis by
/// axis-only distance. Returns the room id and the plane ids merged away.
///
/// Afterwards, walls that belong to no room and duplicate one of the room's
/// walls (same floor, category and facing, within `stray_merge_distance`)
/// are merged as well. Such strays appear when a wall was first glimpsed
/// through a doorway before drift set in.
pub fn associate_room(
    graph: &mut FactorGraph,
    observations: &mut PlaneObservations,
    candidate: &RoomCandidate,
    cfg: &SceneConfig,
) -> Result<(VariableId, Vec<VariableId>), SceneError> {
    let (room, mut merged) = match_or_create_room(graph, observations, candidate, cfg)?;
    absorb_strays(graph, observations, room, cfg, &mut merged)?;
    Ok((room, merged))
}

fn absorb_strays(
    g: &mut FactorGraph,
    obs: &mut PlaneObservations,
    room: VariableId,
    cfg: &SceneConfig,
    merged: &mut Vec<VariableId>,
) -> Result<(), SceneError> {
    let mut i = 0;
    loop {
        // re-read each time: a merge may rename a member
        let members = g.room(room)?.member_planes();
        let Some(&m) = members.get(i) else { break };
        i += 1;
        let in_rooms: BTreeSet<VariableId> = g
            .ids_of_kind(VariableKind::Room)
            .into_iter()
            .filter_map(|r| g.room(r).ok().map(|r| r.member_planes()))
            .flatten()
            .collect();
        let wall = g.plane(m)?.clone();
        let strays: Vec<VariableId> = g
            .ids_of_kind(VariableKind::Plane)
            .into_iter()
            .filter(|p| !in_rooms.contains(p))
            .filter(|&p| {
                g.plane(p).is_ok_and(|q| {
                    q.floor == wall.floor
                        && q.category == wall.category
                        && q.coeffs.normal.dot(&wall.coeffs.normal) > 0.0
                        && q.coeffs.coefficient_distance(&wall.coeffs) <= cfg.stray_merge_distance
                })
            })
            .collect();
        for s in strays {
            let m = g.room(room)?.member_planes()[i - 1];
            let (survivor, duplicate) = (s.min(m), s.max(m));
            g.merge_variable(duplicate, survivor)?;
            obs.merge(duplicate, survivor);
            merged.push(duplicate);
        }
    }
    Ok(())
}

fn match_or_create_room(
    graph: &mut FactorGraph,
    observations: &mut PlaneObservations,
    candidate: &RoomCandidate,
    cfg: &SceneConfig,
) -> Result<(VariableId, Vec<VariableId>), SceneError> {
    let members = candidate.planes();
    let floor = graph.plane(members[0])?.floor;
    let mut merged = Vec::new();
    let tol = cfg.room_match_tol;
    let c = candidate.center;

    match candidate.kind {
        RoomKind::Finite => {
            let (xp, yp) = (candidate.x_pair.expect("finite"), candidate.y_pair.expect("finite"));
            if let Some(r) = nearest_room(graph, tol, |_, r| {
                (r.kind == RoomKind::Finite && r.floor == floor).then(|| (r.position - c).norm())
            }) {
                reconcile_side(graph, observations, r, Axis::X, xp, cfg, &mut merged)?;
                reconcile_side(graph, observations, r, Axis::Y, yp, cfg, &mut merged)?;
                return Ok((r, merged));
            }
            if let Some(r) = nearest_room(graph, tol, |_, r| {
                let axis = r.axis?;
                let free = axis.other();
                let inside = within_pair(graph, candidate.pair(free), free, r.position[free.index()]);
                (r.kind == RoomKind::Infinite && r.floor == floor && inside)
                    .then(|| (r.position[axis.index()] - c[axis.index()]).abs())
            }) {
                let axis = graph.room(r)?.axis.expect("infinite room has an axis");
                reconcile_side(
                    graph,
                    observations,
                    r,
                    axis,
                    candidate.pair(axis).expect("finite"),
                    cfg,
                    &mut merged,
                )?;
                for fid in graph.factors_of(r) {
                    if fid.kind == FactorKind::RoomPrior {
                        graph.remove_factor(fid)?;
                    }
                }
                {
                    let room = graph.room_mut(r)?;
                    room.kind = RoomKind::Finite;
                    room.axis = None;
                    room.position = c;
                }
                let other = axis.other();
                reconcile_side(
                    graph,
                    observations,
                    r,
                    other,
                    candidate.pair(other).expect("finite"),
                    cfg,
                    &mut merged,
                )?;
                return Ok((r, merged));
            }
        }
        RoomKind::Infinite => {
            let axis = candidate.axis.expect("infinite candidate has an axis");
            let pair = candidate.pair(axis).expect("infinite candidate has its pair");
            let (i, free) = (axis.index(), axis.other());
            if let Some(r) = nearest_room(graph, tol, |_, r| {
                let inside = within_pair(graph, r.planes(free), free, c[free.index()]);
                (r.kind == RoomKind::Finite && r.floor == floor && inside).then(|| (r.position[i] - c[i]).abs())
            }) {
                reconcile_side(graph, observations, r, axis, pair, cfg, &mut merged)?;
                return Ok((r, merged));
            }
            if let Some(r) = nearest_room(graph, tol, |_, r| {
                (r.kind == RoomKind::Infinite && r.floor == floor && r.axis == Some(axis))
                    .then(|| (r.position[i] - c[i]).abs())
            }) {
                reconcile_side(graph, observations, r, axis, pair, cfg, &mut merged)?;
                set_prior(graph, r, c[free.index()]);
                return Ok((r, merged));
            }
        }
    }

    let room = graph.add_variable(Variable::Room(RoomVar {
        position: c,
        kind: candidate.kind,
        axis: candidate.axis,
        floor,
        x_planes: None,
        y_planes: None,
    }));
    for axis in [Axis::X, Axis::Y] {
        if let Some(pair) = candidate.pair(axis) {
            if candidate.kind == RoomKind::Finite || candidate.axis == Some(axis) {
                *graph.room_mut(room)?.planes_mut(axis) = Some(pair);
                add_pair_factor(graph, room, pair, axis, cfg)?;
            }
        }
    }
    if let (RoomKind::Infinite, Some(axis)) = (candidate.kind, candidate.axis) {
        let free = axis.other();
        graph.add_factor(Factor::RoomPrior(RoomPriorFactor {
            room,
            axis: free,
            measurement: c[free.index()],
            information: cfg.pair_information * cfg.prior_relative_information,
        }))?;
    }
    Ok((room, merged))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Frame;
    use nalgebra::Vector3;

    fn wall(n: Vector3<f64>, d: f64) -> PlaneCoeffs {
        PlaneCoeffs::new(n, d, Frame::Map)
    }

    #[test]
    fn finite_center_examples() {
        let x0 = wall(Vector3::x(), 0.0);
        let x4 = wall(-Vector3::x(), 4.0);
        let y0 = wall(Vector3::y(), 0.0);
        let y6 = wall(-Vector3::y(), 6.0);
        assert_eq!(
            compute_room_center_finite([&x0, &x4], [&y0, &y6]).unwrap(),
            Vector2::new(2.0, 3.0)
        );
        let x1 = wall(Vector3::x(), -1.0);
        let x5 = wall(-Vector3::x(), 5.0);
        assert_eq!(
            compute_room_center_finite([&x1, &x5], [&y0, &y6]).unwrap(),
            Vector2::new(3.0, 3.0)
        );
        assert_eq!(
            compute_room_center_finite([&x0, &x1], [&y0, &y6]),
            Err(SceneError::NotOpposed)
        );
    }

    #[test]
    fn infinite_center_examples() {
        let x0 = wall(Vector3::x(), 0.0);
        let x4 = wall(-Vector3::x(), 4.0);
        let c = compute_room_center_infinite([&x0, &x4], Axis::X, &Vector2::new(1.7, 8.2)).unwrap();
        assert_eq!(c, Vector2::new(2.0, 8.2));
        let y0 = wall(Vector3::y(), 0.0);
        let y2 = wall(-Vector3::y(), 2.0);
        let c = compute_room_center_infinite([&y0, &y2], Axis::Y, &Vector2::new(9.9, 1.3)).unwrap();
        assert_eq!(c, Vector2::new(9.9, 1.0));
        let m = Vector2::new(2.0, -3.0);
        assert_eq!(compute_room_center_infinite([&x0, &x4], Axis::X, &m).unwrap(), m);
    }

    #[test]
    fn walls_must_face_each_other() {
        let inward = [wall(Vector3::x(), 0.0), wall(-Vector3::x(), 4.0)];
        assert!(facing_each_other(&inward[0], &inward[1]));
        let outward = [wall(-Vector3::x(), 0.0), wall(Vector3::x(), -4.0)];
        assert!(!facing_each_other(&outward[0], &outward[1]));
    }
}
