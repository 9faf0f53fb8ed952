//! Situational factor graph: keyframe, plane, room and floor variables tied
//! together by typed factors, plus a robust Levenberg–Marquardt back-end.

pub mod factors;
pub mod io;
pub mod optimizer;

use std::collections::BTreeMap;
use std::fmt;

use nalgebra::{DMatrix, Matrix2, Matrix4, Matrix6, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Axis, Frame, PlaneCategory, PlaneCoeffs, Pose};

pub use factors::Linearization;
pub use optimizer::{optimize, OptReport, OptimizerConfig};

/// Anti-parallel tolerance for opposed wall pairs.
pub const OPPOSED_MAX_ANGLE_DEG: f64 = 25.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("unknown variable {0}")]
    UnknownVariable(VariableId),
    #[error("variable {id} is not a {expected:?}")]
    KindMismatch { id: VariableId, expected: VariableKind },
    #[error("unknown factor {0}")]
    UnknownFactor(FactorId),
    #[error("information matrix is not symmetric positive definite")]
    InvalidInformation,
    #[error("observed plane must be expressed in the sensor frame")]
    FrameMismatch,
    #[error("planes {0} and {1} are not opposed")]
    NotOpposed(VariableId, VariableId),
    #[error("plane pair is not opposed")]
    PairNotOpposed,
    #[error("normal equations are singular; is the graph anchored?")]
    SingularSystem,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VariableKind {
    Keyframe,
    Plane,
    Room,
    Floor,
}

impl VariableKind {
    fn slot(self) -> usize {
        self as usize
    }

    /// Tangent-space dimension used by the optimizer.
    pub fn dim(self) -> usize {
        match self {
            VariableKind::Keyframe => 6,
            VariableKind::Plane => 4,
            VariableKind::Room | VariableKind::Floor => 2,
        }
    }
}

/// Variable handle. Ordering sorts by kind first, which is also the column
/// order of the normal equations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct VariableId {
    pub kind: VariableKind,
    pub index: u64,
}

impl VariableId {
    pub fn new(kind: VariableKind, index: u64) -> Self {
        Self { kind, index }
    }
}

impl fmt::Display for VariableId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = match self.kind {
            VariableKind::Keyframe => 'k',
            VariableKind::Plane => 'p',
            VariableKind::Room => 'r',
            VariableKind::Floor => 'f',
        };
        write!(f, "{tag}{}", self.index)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FactorKind {
    Odometry,
    PosePlane,
    RoomPlanePair,
    RoomPrior,
    FloorRoom,
    Loop,
    PoseAnchor,
}

/// Factor handle; `index` is a single counter shared by all factor kinds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct FactorId {
    pub kind: FactorKind,
    pub index: u64,
}

impl fmt::Display for FactorId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}#{}", self.kind, self.index)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct KeyframeVar {
    pub pose: Pose,
    pub timestamp: f64,
    pub floor: u32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PlaneVar {
    /// Map-frame coefficients, oriented so the observing sensor sits on the positive side.
    pub coeffs: PlaneCoeffs,
    pub category: PlaneCategory,
    pub floor: u32,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoomKind {
    Finite,
    Infinite,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RoomVar {
    pub position: Vector2<f64>,
    pub kind: RoomKind,
    /// Constrained axis of an infinite room.
    pub axis: Option<Axis>,
    pub floor: u32,
    pub x_planes: Option<[VariableId; 2]>,
    pub y_planes: Option<[VariableId; 2]>,
}

impl RoomVar {
    pub fn planes(&self, axis: Axis) -> Option<[VariableId; 2]> {
        match axis {
            Axis::X => self.x_planes,
            Axis::Y => self.y_planes,
        }
    }

    pub fn planes_mut(&mut self, axis: Axis) -> &mut Option<[VariableId; 2]> {
        match axis {
            Axis::X => &mut self.x_planes,
            Axis::Y => &mut self.y_planes,
        }
    }

    pub fn member_planes(&self) -> Vec<VariableId> {
        self.x_planes
            .iter()
            .chain(self.y_planes.iter())
            .flatten()
            .copied()
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FloorVar {
    pub position: Vector2<f64>,
    pub floor: u32,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Variable {
    Keyframe(KeyframeVar),
    Plane(PlaneVar),
    Room(RoomVar),
    Floor(FloorVar),
}

impl Variable {
    pub fn kind(&self) -> VariableKind {
        match self {
            Variable::Keyframe(_) => VariableKind::Keyframe,
            Variable::Plane(_) => VariableKind::Plane,
            Variable::Room(_) => VariableKind::Room,
            Variable::Floor(_) => VariableKind::Floor,
        }
    }

    /// Applies a tangent-space increment without renormalizing plane normals.
    pub fn plus(&self, delta: &[f64]) -> Variable {
        match self {
            Variable::Keyframe(k) => Variable::Keyframe(KeyframeVar {
                pose: k.pose.retract(delta),
                ..k.clone()
            }),
            Variable::Plane(p) => {
                let c = &p.coeffs;
                Variable::Plane(PlaneVar {
                    coeffs: PlaneCoeffs {
                        normal: c.normal + Vector3::new(delta[0], delta[1], delta[2]),
                        d: c.d + delta[3],
                        frame: c.frame,
                    },
                    ..p.clone()
                })
            }
            Variable::Room(r) => Variable::Room(RoomVar {
                position: r.position + Vector2::new(delta[0], delta[1]),
                ..r.clone()
            }),
            Variable::Floor(f) => Variable::Floor(FloorVar {
                position: f.position + Vector2::new(delta[0], delta[1]),
                ..f.clone()
            }),
        }
    }

    /// Restores the unit-normal invariant of plane variables.
    pub fn normalized(self) -> Variable {
        match self {
            Variable::Plane(mut p) => {
                p.coeffs = PlaneCoeffs::new(p.coeffs.normal, p.coeffs.d, p.coeffs.frame);
                Variable::Plane(p)
            }
            other => other,
        }
    }
}

/// Relative-pose constraint between two keyframes (odometry or loop closure).
#[derive(Clone, Debug, PartialEq)]
pub struct BetweenFactor {
    pub from: VariableId,
    pub to: VariableId,
    pub measurement: Pose,
    pub information: Matrix6<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PosePlaneFactor {
    pub keyframe: VariableId,
    pub plane: VariableId,
    /// Observed plane in the keyframe's sensor frame.
    pub observed: PlaneCoeffs,
    pub information: Matrix4<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RoomPlanePairFactor {
    pub room: VariableId,
    pub planes: [VariableId; 2],
    pub axis: Axis,
    pub information: f64,
}

/// Weak prior on the free coordinate of an infinite room.
#[derive(Clone, Debug, PartialEq)]
pub struct RoomPriorFactor {
    pub room: VariableId,
    pub axis: Axis,
    pub measurement: f64,
    pub information: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FloorRoomFactor {
    pub floor: VariableId,
    pub room: VariableId,
    /// Room-minus-floor offset recorded when the edge was created or re-anchored.
    pub offset: Vector2<f64>,
    pub information: Matrix2<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PoseAnchorFactor {
    pub keyframe: VariableId,
    pub prior: Pose,
    pub information: Matrix6<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Factor {
    Odometry(BetweenFactor),
    PosePlane(PosePlaneFactor),
    RoomPlanePair(RoomPlanePairFactor),
    RoomPrior(RoomPriorFactor),
    FloorRoom(FloorRoomFactor),
    Loop(BetweenFactor),
    PoseAnchor(PoseAnchorFactor),
}

impl Factor {
    pub fn kind(&self) -> FactorKind {
        match self {
            Factor::Odometry(_) => FactorKind::Odometry,
            Factor::PosePlane(_) => FactorKind::PosePlane,
            Factor::RoomPlanePair(_) => FactorKind::RoomPlanePair,
            Factor::RoomPrior(_) => FactorKind::RoomPrior,
            Factor::FloorRoom(_) => FactorKind::FloorRoom,
            Factor::Loop(_) => FactorKind::Loop,
            Factor::PoseAnchor(_) => FactorKind::PoseAnchor,
        }
    }

    /// Referenced variables paired with the kind each slot requires.
    pub fn variables(&self) -> Vec<(VariableId, VariableKind)> {
        use VariableKind::*;
        match self {
            Factor::Odometry(f) | Factor::Loop(f) => vec![(f.from, Keyframe), (f.to, Keyframe)],
            Factor::PosePlane(f) => vec![(f.keyframe, Keyframe), (f.plane, Plane)],
            Factor::RoomPlanePair(f) => {
                vec![(f.room, Room), (f.planes[0], Plane), (f.planes[1], Plane)]
            }
            Factor::RoomPrior(f) => vec![(f.room, Room)],
            Factor::FloorRoom(f) => vec![(f.floor, Floor), (f.room, Room)],
            Factor::PoseAnchor(f) => vec![(f.keyframe, Keyframe)],
        }
    }

    pub fn references(&self, id: VariableId) -> bool {
        self.variables().iter().any(|(v, _)| *v == id)
    }

    fn replace_variable(&mut self, old: VariableId, new: VariableId) {
        let swap = |v: &mut VariableId| {
            if *v == old {
                *v = new;
            }
        };
        match self {
            Factor::Odometry(f) | Factor::Loop(f) => {
                swap(&mut f.from);
                swap(&mut f.to);
            }
            Factor::PosePlane(f) => {
                swap(&mut f.keyframe);
                swap(&mut f.plane);
            }
            Factor::RoomPlanePair(f) => {
                swap(&mut f.room);
                swap(&mut f.planes[0]);
                swap(&mut f.planes[1]);
            }
            Factor::RoomPrior(f) => swap(&mut f.room),
            Factor::FloorRoom(f) => {
                swap(&mut f.floor);
                swap(&mut f.room);
            }
            Factor::PoseAnchor(f) => swap(&mut f.keyframe),
        }
    }

    fn information_is_valid(&self) -> bool {
        match self {
            Factor::Odometry(f) | Factor::Loop(f) => is_spd(&dyn_matrix(&f.information)),
            Factor::PosePlane(f) => is_spd(&dyn_matrix(&f.information)),
            Factor::RoomPlanePair(f) => f.information.is_finite() && f.information > 0.0,
            Factor::RoomPrior(f) => f.information.is_finite() && f.information > 0.0,
            Factor::FloorRoom(f) => is_spd(&dyn_matrix(&f.information)),
            Factor::PoseAnchor(f) => is_spd(&dyn_matrix(&f.information)),
        }
    }
}

fn dyn_matrix<const N: usize>(m: &nalgebra::SMatrix<f64, N, N>) -> DMatrix<f64> {
    DMatrix::from_iterator(N, N, m.iter().copied())
}

fn is_spd(m: &DMatrix<f64>) -> bool {
    if m.iter().any(|v| !v.is_finite()) {
        return false;
    }
    let scale = m.abs().max().max(1.0);
    let asym = (m - m.transpose()).abs().max();
    asym <= 1e-9 * scale && m.clone().cholesky().is_some()
}

/// Whether two oriented planes face each other within the opposed-pair tolerance.
pub fn planes_opposed(a: &PlaneCoeffs, b: &PlaneCoeffs) -> bool {
    a.normal.dot(&b.normal) < -OPPOSED_MAX_ANGLE_DEG.to_radians().cos()
}

/// Variable and factor storage.
///
/// Mutation requires `&mut`, so a graph has a single writer; readers that need
/// a stable view while the owner keeps mutating take a [`FactorGraph::snapshot`].
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FactorGraph {
    variables: BTreeMap<VariableId, Variable>,
    factors: BTreeMap<FactorId, Factor>,
    next_variable: [u64; 4],
    next_factor: u64,
}

impl FactorGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn snapshot(&self) -> FactorGraph {
        self.clone()
    }

    pub fn add_variable(&mut self, v: Variable) -> VariableId {
        let kind = v.kind();
        let id = VariableId::new(kind, self.next_variable[kind.slot()]);
        self.next_variable[kind.slot()] += 1;
        self.variables.insert(id, v);
        id
    }

    pub fn add_factor(&mut self, f: Factor) -> Result<FactorId, GraphError> {
        for (id, expected) in f.variables() {
            self.check_kind(id, expected)?;
        }
        if !f.information_is_valid() {
            return Err(GraphError::InvalidInformation);
        }
        match &f {
            Factor::PosePlane(pp) if pp.observed.frame != Frame::Sensor => return Err(GraphError::FrameMismatch),
            Factor::RoomPlanePair(rp) => {
                let a = &self.plane(rp.planes[0])?.coeffs;
                let b = &self.plane(rp.planes[1])?.coeffs;
                if rp.planes[0] == rp.planes[1] || !planes_opposed(a, b) {
                    return Err(GraphError::NotOpposed(rp.planes[0], rp.planes[1]));
                }
            }
            _ => {}
        }
        let id = FactorId {
            kind: f.kind(),
            index: self.next_factor,
        };
        self.next_factor += 1;
        self.factors.insert(id, f);
        Ok(id)
    }

    fn check_kind(&self, id: VariableId, expected: VariableKind) -> Result<(), GraphError> {
        if id.kind != expected {
            return Err(GraphError::KindMismatch { id, expected });
        }
        if !self.variables.contains_key(&id) {
            return Err(GraphError::UnknownVariable(id));
        }
        Ok(())
    }

    pub fn variable(&self, id: VariableId) -> Option<&Variable> {
        self.variables.get(&id)
    }

    /// Overwrites a variable's estimate; the kind must not change.
    pub fn set_variable(&mut self, id: VariableId, v: Variable) -> Result<(), GraphError> {
        if v.kind() != id.kind {
            return Err(GraphError::KindMismatch { id, expected: v.kind() });
        }
        match self.variables.get_mut(&id) {
            Some(slot) => {
                *slot = v;
                Ok(())
            }
            None => Err(GraphError::UnknownVariable(id)),
        }
    }

    pub fn variables(&self) -> impl Iterator<Item = (&VariableId, &Variable)> {
        self.variables.iter()
    }

    pub fn factors(&self) -> impl Iterator<Item = (&FactorId, &Factor)> {
        self.factors.iter()
    }

    pub fn factor(&self, id: FactorId) -> Option<&Factor> {
        self.factors.get(&id)
    }

    pub fn factor_mut(&mut self, id: FactorId) -> Option<&mut Factor> {
        self.factors.get_mut(&id)
    }

    pub fn remove_factor(&mut self, id: FactorId) -> Result<Factor, GraphError> {
        self.factors.remove(&id).ok_or(GraphError::UnknownFactor(id))
    }

    pub fn num_variables(&self) -> usize {
        self.variables.len()
    }

    pub fn num_factors(&self) -> usize {
        self.factors.len()
    }

    pub fn count_variables(&self, kind: VariableKind) -> usize {
        self.variables.keys().filter(|id| id.kind == kind).count()
    }

    pub fn count_factors(&self, kind: FactorKind) -> usize {
        self.factors.keys().filter(|id| id.kind == kind).count()
    }

    pub fn ids_of_kind(&self, kind: VariableKind) -> Vec<VariableId> {
        self.variables.keys().filter(|id| id.kind == kind).copied().collect()
    }

    pub fn factors_of(&self, id: VariableId) -> Vec<FactorId> {
        self.factors
            .iter()
            .filter(|(_, f)| f.references(id))
            .map(|(fid, _)| *fid)
            .collect()
    }

    pub fn keyframe(&self, id: VariableId) -> Result<&KeyframeVar, GraphError> {
        match self.lookup(id, VariableKind::Keyframe)? {
            Variable::Keyframe(k) => Ok(k),
            _ => unreachable!(),
        }
    }

    pub fn plane(&self, id: VariableId) -> Result<&PlaneVar, GraphError> {
        match self.lookup(id, VariableKind::Plane)? {
            Variable::Plane(p) => Ok(p),
            _ => unreachable!(),
        }
    }

    pub fn room(&self, id: VariableId) -> Result<&RoomVar, GraphError> {
        match self.lookup(id, VariableKind::Room)? {
            Variable::Room(r) => Ok(r),
            _ => unreachable!(),
        }
    }

    pub fn room_mut(&mut self, id: VariableId) -> Result<&mut RoomVar, GraphError> {
        self.check_kind(id, VariableKind::Room)?;
        match self.variables.get_mut(&id) {
            Some(Variable::Room(r)) => Ok(r),
            _ => unreachable!(),
        }
    }

    pub fn floor(&self, id: VariableId) -> Result<&FloorVar, GraphError> {
        match self.lookup(id, VariableKind::Floor)? {
            Variable::Floor(f) => Ok(f),
            _ => unreachable!(),
        }
    }

    pub fn floor_mut(&mut self, id: VariableId) -> Result<&mut FloorVar, GraphError> {
        self.check_kind(id, VariableKind::Floor)?;
        match self.variables.get_mut(&id) {
            Some(Variable::Floor(f)) => Ok(f),
            _ => unreachable!(),
        }
    }

    fn lookup(&self, id: VariableId, kind: VariableKind) -> Result<&Variable, GraphError> {
        self.check_kind(id, kind)?;
        Ok(&self.variables[&id])
    }

    /// Rewires every factor of `duplicate` onto `survivor`, updates room
    /// membership, and removes `duplicate`. Factor count is unchanged.
    pub fn merge_variable(&mut self, duplicate: VariableId, survivor: VariableId) -> Result<(), GraphError> {
        if duplicate.kind != survivor.kind {
            return Err(GraphError::KindMismatch {
                id: duplicate,
                expected: survivor.kind,
            });
        }
        self.check_kind(duplicate, duplicate.kind)?;
        self.check_kind(survivor, survivor.kind)?;
        for f in self.factors.values_mut() {
            f.replace_variable(duplicate, survivor);
        }
        for v in self.variables.values_mut() {
            if let Variable::Room(r) = v {
                for pair in [&mut r.x_planes, &mut r.y_planes].into_iter().flatten() {
                    for p in pair.iter_mut() {
                        if *p == duplicate {
                            *p = survivor;
                        }
                    }
                }
            }
        }
        self.variables.remove(&duplicate);
        Ok(())
    }

    pub(crate) fn next_counters(&self) -> ([u64; 4], u64) {
        (self.next_variable, self.next_factor)
    }

    pub(crate) fn from_parts(
        variables: BTreeMap<VariableId, Variable>,
        factors: BTreeMap<FactorId, Factor>,
        next_variable: [u64; 4],
        next_factor: u64,
    ) -> Self {
        Self {
            variables,
            factors,
            next_variable,
            next_factor,
        }
    }
}
