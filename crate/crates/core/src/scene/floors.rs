use nalgebra::{Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use super::{SceneConfig, SceneError};
use crate::geometry::PlaneCategory;
use crate::graph::{Factor, FactorGraph, FloorRoomFactor, FloorVar, Variable, VariableId, VariableKind};

#[derive(Clone, Debug, PartialEq)]
pub struct FloorEstimate {
    pub floor: u32,
    pub variable: VariableId,
    pub center: Vector2<f64>,
    /// Whether the floor node jumped and its room edges were re-measured.
    pub reanchored: bool,
}

/// Reference heights of the floors seen so far; the floor id is the index.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FloorRegistry {
    pub reference_z: Vec<f64>,
}

/// Nearest known floor within tolerance of `z`, or a new floor at `z`.
pub fn detect_floor_change(z: f64, floors: &mut FloorRegistry, cfg: &SceneConfig) -> u32 {
    let mut best: Option<(f64, usize)> = None;
    for (i, r) in floors.reference_z.iter().enumerate() {
        let dz = (z - r).abs();
        if dz <= cfg.floor_height_tol && best.is_none_or(|(b, _)| dz < b) {
            best = Some((dz, i));
        }
    }
    match best {
        Some((_, i)) => i as u32,
        None => {
            floors.reference_z.push(z);
            (floors.reference_z.len() - 1) as u32
        }
    }
}

/// Places the floor node at the midpoint of the extreme walls of `floor` and
/// links it to every room of that floor.
pub fn update_floor(graph: &mut FactorGraph, floor: u32, cfg: &SceneConfig) -> Result<FloorEstimate, SceneError> {
    let mut xs: Vec<f64> = Vec::new();
    let mut ys: Vec<f64> = Vec::new();
    for id in graph.ids_of_kind(VariableKind::Plane) {
        let p = graph.plane(id)?;
        if p.floor != floor {
            continue;
        }
        let c = p.coeffs.closest_point();
        match p.category {
            PlaneCategory::XVertical => xs.push(c.x),
            PlaneCategory::YVertical => ys.push(c.y),
            PlaneCategory::Horizontal => {}
        }
    }
    if xs.is_empty() || ys.is_empty() {
        return Err(SceneError::InsufficientWalls(floor));
    }
    let mid = |v: &[f64]| {
        let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lo + hi)
    };
    let center = Vector2::new(mid(&xs), mid(&ys));

    let existing = graph
        .ids_of_kind(VariableKind::Floor)
        .into_iter()
        .find(|id| graph.floor(*id).map(|f| f.floor == floor).unwrap_or(false));
    let mut reanchored = false;
    let var = match existing {
        None => graph.add_variable(Variable::Floor(FloorVar {
            position: center,
            floor,
        })),
        Some(id) => {
            if (graph.floor(id)?.position - center).norm() > cfg.floor_reanchor_distance {
                graph.floor_mut(id)?.position = center;
                for fid in graph.factors_of(id) {
                    let room = match graph.factor(fid) {
                        Some(Factor::FloorRoom(f)) => f.room,
                        _ => continue,
                    };
                    let offset = graph.room(room)?.position - center;
                    if let Some(Factor::FloorRoom(f)) = graph.factor_mut(fid) {
                        f.offset = offset;
                    }
                }
                reanchored = true;
            }
            id
        }
    };

    let position = graph.floor(var)?.position;
    let linked: Vec<VariableId> = graph
        .factors_of(var)
        .into_iter()
        .filter_map(|fid| match graph.factor(fid) {
            Some(Factor::FloorRoom(f)) => Some(f.room),
            _ => None,
        })
        .collect();
    for room in graph.ids_of_kind(VariableKind::Room) {
        let r = graph.room(room)?;
        if r.floor != floor || linked.contains(&room) {
            continue;
        }
        let offset = r.position - position;
        graph.add_factor(Factor::FloorRoom(FloorRoomFactor {
            floor: var,
            room,
            offset,
            information: Matrix2::identity() * cfg.floor_information,
        }))?;
    }
    Ok(FloorEstimate {
        floor,
        variable: var,
        center,
        reanchored,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Frame, PlaneCoeffs};
    use crate::graph::{FactorKind, PlaneVar, RoomKind, RoomVar};
    use nalgebra::Vector3;

    fn add_wall(g: &mut FactorGraph, n: Vector3<f64>, d: f64, category: PlaneCategory) {
        g.add_variable(Variable::Plane(PlaneVar {
            coeffs: PlaneCoeffs::new(n, d, Frame::Map),
            category,
            floor: 0,
        }));
    }

    #[test]
    fn floor_center_and_reanchor() {
        let mut g = FactorGraph::new();
        let cfg = SceneConfig::default();
        add_wall(&mut g, Vector3::x(), 0.0, PlaneCategory::XVertical);
        assert_eq!(update_floor(&mut g, 0, &cfg), Err(SceneError::InsufficientWalls(0)));

        add_wall(&mut g, -Vector3::x(), 20.0, PlaneCategory::XVertical);
        add_wall(&mut g, Vector3::y(), 0.0, PlaneCategory::YVertical);
        add_wall(&mut g, -Vector3::y(), 10.0, PlaneCategory::YVertical);
        let room = g.add_variable(Variable::Room(RoomVar {
            position: Vector2::new(3.0, 4.0),
            kind: RoomKind::Finite,
            axis: None,
            floor: 0,
            x_planes: None,
            y_planes: None,
        }));
        let e = update_floor(&mut g, 0, &cfg).unwrap();
        assert_eq!(e.center, Vector2::new(10.0, 5.0));
        assert_eq!(g.count_factors(FactorKind::FloorRoom), 1);

        add_wall(&mut g, -Vector3::x(), 30.0, PlaneCategory::XVertical);
        let e = update_floor(&mut g, 0, &cfg).unwrap();
        assert_eq!(e.center.x, 15.0);
        assert!(e.reanchored);
        assert_eq!(g.count_factors(FactorKind::FloorRoom), 1);
        let fid = g
            .factors_of(room)
            .into_iter()
            .find(|f| f.kind == FactorKind::FloorRoom)
            .unwrap();
        match g.factor(fid) {
            Some(Factor::FloorRoom(f)) => assert_eq!(f.offset, Vector2::new(-12.0, -1.0)),
            _ => unreachable!(),
        }
    }

    #[test]
    fn floor_change_examples() {
        let cfg = SceneConfig::default();
        let mut floors = FloorRegistry::default();
        assert_eq!(detect_floor_change(0.0, &mut floors, &cfg), 0);
        assert_eq!(detect_floor_change(0.4, &mut floors, &cfg), 0);
        assert_eq!(detect_floor_change(3.2, &mut floors, &cfg), 1);
        assert_eq!(detect_floor_change(0.1, &mut floors, &cfg), 0);
        assert_eq!(floors.reference_z, vec![0.0, 3.2]);
    }
}
