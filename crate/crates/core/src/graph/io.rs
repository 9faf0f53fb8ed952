//! JSON export and import of a [`FactorGraph`].
//!
//! Floats go through serde_json's shortest round-trip encoding, so a graph
//! read back from its own export is bit-identical. Information matrices are
//! stored row-major as flat arrays.

use std::collections::BTreeMap;

use nalgebra::{Quaternion, SMatrix, UnitQuaternion, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::*;

#[derive(Debug, Error)]
pub enum GraphIoError {
    #[error("malformed graph document: {0}")]
    Json(#[from] serde_json::Error),
    #[error("invalid graph: {0}")]
    Graph(#[from] GraphError),
    #[error("information matrix of factor {index} has {got} entries, expected {expected}")]
    InformationSize { index: u64, got: usize, expected: usize },
    #[error("duplicate id {0}")]
    DuplicateId(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum VariableDoc {
    Keyframe {
        index: u64,
        rotation: [f64; 4],
        translation: [f64; 3],
        timestamp: f64,
        floor: u32,
    },
    Plane {
        index: u64,
        normal: [f64; 3],
        d: f64,
        category: PlaneCategory,
        floor: u32,
    },
    Room {
        index: u64,
        position: [f64; 2],
        room_kind: RoomKind,
        axis: Option<Axis>,
        floor: u32,
        x_planes: Option<[u64; 2]>,
        y_planes: Option<[u64; 2]>,
    },
    Floor {
        index: u64,
        position: [f64; 2],
        floor: u32,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FactorDoc {
    Odometry {
        index: u64,
        from: u64,
        to: u64,
        rotation: [f64; 4],
        translation: [f64; 3],
        information: Vec<f64>,
    },
    PosePlane {
        index: u64,
        keyframe: u64,
        plane: u64,
        normal: [f64; 3],
        d: f64,
        information: Vec<f64>,
    },
    RoomPlanePair {
        index: u64,
        room: u64,
        planes: [u64; 2],
        axis: Axis,
        information: f64,
    },
    RoomPrior {
        index: u64,
        room: u64,
        axis: Axis,
        measurement: f64,
        information: f64,
    },
    FloorRoom {
        index: u64,
        floor: u64,
        room: u64,
        offset: [f64; 2],
        information: Vec<f64>,
    },
    Loop {
        index: u64,
        from: u64,
        to: u64,
        rotation: [f64; 4],
        translation: [f64; 3],
        information: Vec<f64>,
    },
    PoseAnchor {
        index: u64,
        keyframe: u64,
        rotation: [f64; 4],
        translation: [f64; 3],
        information: Vec<f64>,
    },
}

/// Serialized form of a whole graph.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphDoc {
    /// Next free index per variable kind (keyframe, plane, room, floor).
    pub next_variable: [u64; 4],
    pub next_factor: u64,
    pub variables: Vec<VariableDoc>,
    pub factors: Vec<FactorDoc>,
}

fn row_major<const N: usize>(m: &SMatrix<f64, N, N>) -> Vec<f64> {
    let mut out = Vec::with_capacity(N * N);
    for r in 0..N {
        for c in 0..N {
            out.push(m[(r, c)]);
        }
    }
    out
}

fn from_row_major<const N: usize>(index: u64, v: &[f64]) -> Result<SMatrix<f64, N, N>, GraphIoError> {
    if v.len() != N * N {
        return Err(GraphIoError::InformationSize {
            index,
            got: v.len(),
            expected: N * N,
        });
    }
    Ok(SMatrix::<f64, N, N>::from_row_slice(v))
}

fn quat(p: &Pose) -> [f64; 4] {
    let q = p.rotation.quaternion();
    [q.w, q.i, q.j, q.k]
}

fn pose_from(rotation: [f64; 4], translation: [f64; 3]) -> Pose {
    // no renormalization: the stored quaternion is already unit and must
    // survive bit-exactly
    let [w, x, y, z] = rotation;
    Pose {
        rotation: UnitQuaternion::new_unchecked(Quaternion::new(w, x, y, z)),
        translation: Vector3::from(translation),
    }
}

fn idx_pair(p: Option<[VariableId; 2]>) -> Option<[u64; 2]> {
    p.map(|[a, b]| [a.index, b.index])
}

fn plane_pair(p: Option<[u64; 2]>) -> Option<[VariableId; 2]> {
    p.map(|[a, b]| {
        [
            VariableId::new(VariableKind::Plane, a),
            VariableId::new(VariableKind::Plane, b),
        ]
    })
}

impl GraphDoc {
    pub fn from_graph(g: &FactorGraph) -> Self {
        let (next_variable, next_factor) = g.next_counters();
        let variables = g
            .variables()
            .map(|(id, v)| match v {
                Variable::Keyframe(k) => VariableDoc::Keyframe {
                    index: id.index,
                    rotation: quat(&k.pose),
                    translation: k.pose.translation.into(),
                    timestamp: k.timestamp,
                    floor: k.floor,
                },
                Variable::Plane(p) => VariableDoc::Plane {
                    index: id.index,
                    normal: p.coeffs.normal.into(),
                    d: p.coeffs.d,
                    category: p.category,
                    floor: p.floor,
                },
                Variable::Room(r) => VariableDoc::Room {
                    index: id.index,
                    position: r.position.into(),
                    room_kind: r.kind,
                    axis: r.axis,
                    floor: r.floor,
                    x_planes: idx_pair(r.x_planes),
                    y_planes: idx_pair(r.y_planes),
                },
                Variable::Floor(f) => VariableDoc::Floor {
                    index: id.index,
                    position: f.position.into(),
                    floor: f.floor,
                },
            })
            .collect();
        let factors = g
            .factors()
            .map(|(id, f)| {
                let index = id.index;
                match f {
                    Factor::Odometry(b) => FactorDoc::Odometry {
                        index,
                        from: b.from.index,
                        to: b.to.index,
                        rotation: quat(&b.measurement),
                        translation: b.measurement.translation.into(),
                        information: row_major(&b.information),
                    },
                    Factor::Loop(b) => FactorDoc::Loop {
                        index,
                        from: b.from.index,
                        to: b.to.index,
                        rotation: quat(&b.measurement),
                        translation: b.measurement.translation.into(),
                        information: row_major(&b.information),
                    },
                    Factor::PosePlane(p) => FactorDoc::PosePlane {
                        index,
                        keyframe: p.keyframe.index,
                        plane: p.plane.index,
                        normal: p.observed.normal.into(),
                        d: p.observed.d,
                        information: row_major(&p.information),
                    },
                    Factor::RoomPlanePair(p) => FactorDoc::RoomPlanePair {
                        index,
                        room: p.room.index,
                        planes: [p.planes[0].index, p.planes[1].index],
                        axis: p.axis,
                        information: p.information,
                    },
                    Factor::RoomPrior(p) => FactorDoc::RoomPrior {
                        index,
                        room: p.room.index,
                        axis: p.axis,
                        measurement: p.measurement,
                        information: p.information,
                    },
                    Factor::FloorRoom(p) => FactorDoc::FloorRoom {
                        index,
                        floor: p.floor.index,
                        room: p.room.index,
                        offset: p.offset.into(),
                        information: row_major(&p.information),
                    },
                    Factor::PoseAnchor(p) => FactorDoc::PoseAnchor {
                        index,
                        keyframe: p.keyframe.index,
                        rotation: quat(&p.prior),
                        translation: p.prior.translation.into(),
                        information: row_major(&p.information),
                    },
                }
            })
            .collect();
        GraphDoc {
            next_variable,
            next_factor,
            variables,
            factors,
        }
    }

    /// Rebuilds the graph, checking ids, reference kinds and matrix sizes.
    pub fn into_graph(self) -> Result<FactorGraph, GraphIoError> {
        use VariableKind as K;
        let mut variables = BTreeMap::new();
        for v in self.variables {
            let (id, var) = match v {
                VariableDoc::Keyframe {
                    index,
                    rotation,
                    translation,
                    timestamp,
                    floor,
                } => (
                    VariableId::new(K::Keyframe, index),
                    Variable::Keyframe(KeyframeVar {
                        pose: pose_from(rotation, translation),
                        timestamp,
                        floor,
                    }),
                ),
                VariableDoc::Plane {
                    index,
                    normal,
                    d,
                    category,
                    floor,
                } => (
                    VariableId::new(K::Plane, index),
                    Variable::Plane(PlaneVar {
                        coeffs: PlaneCoeffs {
                            normal: Vector3::from(normal),
                            d,
                            frame: Frame::Map,
                        },
                        category,
                        floor,
                    }),
                ),
                VariableDoc::Room {
                    index,
                    position,
                    room_kind,
                    axis,
                    floor,
                    x_planes,
                    y_planes,
                } => (
                    VariableId::new(K::Room, index),
                    Variable::Room(RoomVar {
                        position: Vector2::from(position),
                        kind: room_kind,
                        axis,
                        floor,
                        x_planes: plane_pair(x_planes),
                        y_planes: plane_pair(y_planes),
                    }),
                ),
                VariableDoc::Floor { index, position, floor } => (
                    VariableId::new(K::Floor, index),
                    Variable::Floor(FloorVar {
                        position: Vector2::from(position),
                        floor,
                    }),
                ),
            };
            if variables.insert(id, var).is_some() {
                return Err(GraphIoError::DuplicateId(id.to_string()));
            }
        }

        let kf = |i| VariableId::new(K::Keyframe, i);
        let mut factors = BTreeMap::new();
        for f in self.factors {
            let (index, factor) = match f {
                FactorDoc::Odometry {
                    index,
                    from,
                    to,
                    rotation,
                    translation,
                    information,
                } => (
                    index,
                    Factor::Odometry(BetweenFactor {
                        from: kf(from),
                        to: kf(to),
                        measurement: pose_from(rotation, translation),
                        information: from_row_major(index, &information)?,
                    }),
                ),
                FactorDoc::Loop {
                    index,
                    from,
                    to,
                    rotation,
                    translation,
                    information,
                } => (
                    index,
                    Factor::Loop(BetweenFactor {
                        from: kf(from),
                        to: kf(to),
                        measurement: pose_from(rotation, translation),
                        information: from_row_major(index, &information)?,
                    }),
                ),
                FactorDoc::PosePlane {
                    index,
                    keyframe,
                    plane,
                    normal,
                    d,
                    information,
                } => (
                    index,
                    Factor::PosePlane(PosePlaneFactor {
                        keyframe: kf(keyframe),
                        plane: VariableId::new(K::Plane, plane),
                        observed: PlaneCoeffs {
                            normal: Vector3::from(normal),
                            d,
                            frame: Frame::Sensor,
                        },
                        information: from_row_major(index, &information)?,
                    }),
                ),
                FactorDoc::RoomPlanePair {
                    index,
                    room,
                    planes,
                    axis,
                    information,
                } => (
                    index,
                    Factor::RoomPlanePair(RoomPlanePairFactor {
                        room: VariableId::new(K::Room, room),
                        planes: [
                            VariableId::new(K::Plane, planes[0]),
                            VariableId::new(K::Plane, planes[1]),
                        ],
                        axis,
                        information,
                    }),
                ),
                FactorDoc::RoomPrior {
                    index,
                    room,
                    axis,
                    measurement,
                    information,
                } => (
                    index,
                    Factor::RoomPrior(RoomPriorFactor {
                        room: VariableId::new(K::Room, room),
                        axis,
                        measurement,
                        information,
                    }),
                ),
                FactorDoc::FloorRoom {
                    index,
                    floor,
                    room,
                    offset,
                    information,
                } => (
                    index,
                    Factor::FloorRoom(FloorRoomFactor {
                        floor: VariableId::new(K::Floor, floor),
                        room: VariableId::new(K::Room, room),
                        offset: Vector2::from(offset),
                        information: from_row_major(index, &information)?,
                    }),
                ),
                FactorDoc::PoseAnchor {
                    index,
                    keyframe,
                    rotation,
                    translation,
                    information,
                } => (
                    index,
                    Factor::PoseAnchor(PoseAnchorFactor {
                        keyframe: kf(keyframe),
                        prior: pose_from(rotation, translation),
                        information: from_row_major(index, &information)?,
                    }),
                ),
            };
            for (id, _) in factor.variables() {
                if !variables.contains_key(&id) {
                    return Err(GraphError::UnknownVariable(id).into());
                }
            }
            if !factor.information_is_valid() {
                return Err(GraphError::InvalidInformation.into());
            }
            let id = FactorId {
                kind: factor.kind(),
                index,
            };
            if factors.insert(id, factor).is_some() {
                return Err(GraphIoError::DuplicateId(id.to_string()));
            }
        }
        for v in variables.values() {
            if let Variable::Room(r) = v {
                for p in r.member_planes() {
                    if !variables.contains_key(&p) {
                        return Err(GraphError::UnknownVariable(p).into());
                    }
                }
            }
        }
        Ok(FactorGraph::from_parts(
            variables,
            factors,
            self.next_variable,
            self.next_factor,
        ))
    }
}

pub fn to_json_string(g: &FactorGraph) -> String {
    serde_json::to_string_pretty(&GraphDoc::from_graph(g)).expect("graph documents always serialize")
}

pub fn from_json_str(s: &str) -> Result<FactorGraph, GraphIoError> {
    let doc: GraphDoc = serde_json::from_str(s)?;
    doc.into_graph()
}
