//! Residuals and analytic Jacobians of every factor type.
//!
//! Tangent conventions match [`Variable::plus`]: keyframes use `(ω, v)` with
//! `R ← R·Exp(ω)` and `t ← t + v`; planes are perturbed additively in their
//! raw 4-vector `(n, d)`; rooms and floors are additive 2-vectors.

use nalgebra::{DMatrix, DVector, Matrix2, Matrix4, Matrix6, SMatrix, Vector2, Vector4, Vector6};

use super::{
    planes_opposed, BetweenFactor, Factor, FactorGraph, FloorRoomFactor, GraphError, PosePlaneFactor,
    RoomPlanePairFactor, VariableId,
};
use crate::geometry::{skew, so3_log, so3_right_jacobian_inv, Axis, PlaneCoeffs, Pose};

/// Residual, information and per-variable Jacobian blocks of one factor at
/// the current estimate.
#[derive(Clone, Debug)]
pub struct Linearization {
    pub residual: DVector<f64>,
    pub information: DMatrix<f64>,
    pub jacobians: Vec<(VariableId, DMatrix<f64>)>,
}

impl Linearization {
    /// Whitened squared error `rᵀ Ω r`.
    pub fn squared_error(&self) -> f64 {
        (self.residual.transpose() * &self.information * &self.residual)[0]
    }
}

fn to_dyn<const R: usize, const C: usize>(m: &SMatrix<f64, R, C>) -> DMatrix<f64> {
    DMatrix::from_column_slice(R, C, m.as_slice())
}

fn vec_dyn<const R: usize>(v: &SMatrix<f64, R, 1>) -> DVector<f64> {
    DVector::from_column_slice(v.as_slice())
}

/// `log(Z⁻¹ ∘ (A⁻¹ ∘ B))` as `(rotation, translation)`.
pub fn residual_odometry(measurement: &Pose, a: &Pose, b: &Pose) -> Vector6<f64> {
    measurement.inverse().compose(&a.between(b)).log()
}

/// Jacobians of [`residual_odometry`] with respect to `a` and `b`.
pub fn jacobian_odometry(measurement: &Pose, a: &Pose, b: &Pose) -> (Matrix6<f64>, Matrix6<f64>) {
    let rel = a.between(b);
    let err = measurement.inverse().compose(&rel);
    let phi = so3_log(&err.rotation);
    let jr_inv = so3_right_jacobian_inv(&phi);
    let r_rel = rel.rotation_matrix();
    let r_z_t = measurement.rotation_matrix().transpose();
    let r_a_t = a.rotation_matrix().transpose();

    let mut ja = Matrix6::zeros();
    ja.fixed_view_mut::<3, 3>(0, 0)
        .copy_from(&(-jr_inv * r_rel.transpose()));
    ja.fixed_view_mut::<3, 3>(3, 0)
        .copy_from(&(r_z_t * skew(&rel.translation)));
    ja.fixed_view_mut::<3, 3>(3, 3).copy_from(&(-r_z_t * r_a_t));

    let mut jb = Matrix6::zeros();
    jb.fixed_view_mut::<3, 3>(0, 0).copy_from(&jr_inv);
    jb.fixed_view_mut::<3, 3>(3, 3).copy_from(&(r_z_t * r_a_t));
    (ja, jb)
}

/// `log(Z⁻¹ ∘ X)` for a pose prior.
pub fn residual_pose_anchor(prior: &Pose, x: &Pose) -> Vector6<f64> {
    prior.between(x).log()
}

pub fn jacobian_pose_anchor(prior: &Pose, x: &Pose) -> Matrix6<f64> {
    let err = prior.between(x);
    let phi = so3_log(&err.rotation);
    let mut j = Matrix6::zeros();
    j.fixed_view_mut::<3, 3>(0, 0).copy_from(&so3_right_jacobian_inv(&phi));
    j.fixed_view_mut::<3, 3>(3, 3)
        .copy_from(&prior.rotation_matrix().transpose());
    j
}

/// Predicted-minus-observed local plane. The map plane is expressed in the
/// sensor frame of `x` and sign-aligned to the observation before subtracting.
pub fn residual_pose_plane(observed: &PlaneCoeffs, x: &Pose, plane: &PlaneCoeffs) -> Vector4<f64> {
    let predicted = plane.transformed_to_local(x);
    let s = alignment_sign(&predicted, observed);
    Vector4::new(
        s * predicted.normal.x - observed.normal.x,
        s * predicted.normal.y - observed.normal.y,
        s * predicted.normal.z - observed.normal.z,
        s * predicted.d - observed.d,
    )
}

fn alignment_sign(predicted: &PlaneCoeffs, observed: &PlaneCoeffs) -> f64 {
    if predicted.normal.dot(&observed.normal) < 0.0 {
        -1.0
    } else {
        1.0
    }
}

/// Jacobians of [`residual_pose_plane`] with respect to the pose (4×6) and
/// the raw plane coefficients (4×4).
pub fn jacobian_pose_plane(
    observed: &PlaneCoeffs,
    x: &Pose,
    plane: &PlaneCoeffs,
) -> (SMatrix<f64, 4, 6>, Matrix4<f64>) {
    let predicted = plane.transformed_to_local(x);
    let s = alignment_sign(&predicted, observed);
    let r_t = x.rotation_matrix().transpose();

    let mut jx = SMatrix::<f64, 4, 6>::zeros();
    jx.fixed_view_mut::<3, 3>(0, 0)
        .copy_from(&(s * skew(&predicted.normal)));
    jx.fixed_view_mut::<1, 3>(3, 3)
        .copy_from(&(s * plane.normal.transpose()));

    let mut jp = Matrix4::zeros();
    jp.fixed_view_mut::<3, 3>(0, 0).copy_from(&(s * r_t));
    jp.fixed_view_mut::<1, 3>(3, 0)
        .copy_from(&(s * x.translation.transpose()));
    jp[(3, 3)] = s;
    (jx, jp)
}

/// Room coordinate minus the midpoint of the two walls' closest points on `axis`.
pub fn room_plane_pair_residual(room: &Vector2<f64>, a: &PlaneCoeffs, b: &PlaneCoeffs, axis: Axis) -> f64 {
    let i = axis.index();
    room[i] - 0.5 * (a.closest_point()[i] + b.closest_point()[i])
}

/// Checked form of [`room_plane_pair_residual`]: the pair must face each other.
pub fn residual_room_plane_pair(
    room: &Vector2<f64>,
    a: &PlaneCoeffs,
    b: &PlaneCoeffs,
    axis: Axis,
) -> Result<f64, GraphError> {
    if !planes_opposed(a, b) {
        return Err(GraphError::PairNotOpposed);
    }
    Ok(room_plane_pair_residual(room, a, b, axis))
}

/// Jacobians of [`room_plane_pair_residual`]: room (1×2), plane a (1×4), plane b (1×4).
pub fn jacobian_room_plane_pair(
    a: &PlaneCoeffs,
    b: &PlaneCoeffs,
    axis: Axis,
) -> (SMatrix<f64, 1, 2>, SMatrix<f64, 1, 4>, SMatrix<f64, 1, 4>) {
    let i = axis.index();
    let mut jr = SMatrix::<f64, 1, 2>::zeros();
    jr[i] = 1.0;
    let plane_block = |p: &PlaneCoeffs| {
        let mut j = SMatrix::<f64, 1, 4>::zeros();
        j[i] = 0.5 * p.d;
        j[3] = 0.5 * p.normal[i];
        j
    };
    (jr, plane_block(a), plane_block(b))
}

pub fn residual_room_prior(room: &Vector2<f64>, axis: Axis, measurement: f64) -> f64 {
    room[axis.index()] - measurement
}

/// `(ρ − φ) − δ`.
pub fn residual_floor_room(floor: &Vector2<f64>, room: &Vector2<f64>, offset: &Vector2<f64>) -> Vector2<f64> {
    (room - floor) - offset
}

impl Factor {
    /// Residual at the graph's current estimate.
    pub fn residual(&self, g: &FactorGraph) -> Result<DVector<f64>, GraphError> {
        Ok(match self {
            Factor::Odometry(f) | Factor::Loop(f) => vec_dyn(&between_residual(f, g)?),
            Factor::PosePlane(f) => {
                let (x, p) = pose_plane_inputs(f, g)?;
                vec_dyn(&residual_pose_plane(&f.observed, x, p))
            }
            Factor::RoomPlanePair(f) => {
                let (room, a, b) = pair_inputs(f, g)?;
                DVector::from_element(1, room_plane_pair_residual(room, a, b, f.axis))
            }
            Factor::RoomPrior(f) => {
                let room = &g.room(f.room)?.position;
                DVector::from_element(1, residual_room_prior(room, f.axis, f.measurement))
            }
            Factor::FloorRoom(f) => {
                let (fl, room) = floor_room_inputs(f, g)?;
                vec_dyn(&residual_floor_room(fl, room, &f.offset))
            }
            Factor::PoseAnchor(f) => vec_dyn(&residual_pose_anchor(&f.prior, &g.keyframe(f.keyframe)?.pose)),
        })
    }

    pub fn linearize(&self, g: &FactorGraph) -> Result<Linearization, GraphError> {
        let residual = self.residual(g)?;
        let (information, jacobians) = match self {
            Factor::Odometry(f) | Factor::Loop(f) => {
                let a = &g.keyframe(f.from)?.pose;
                let b = &g.keyframe(f.to)?.pose;
                let (ja, jb) = jacobian_odometry(&f.measurement, a, b);
                (to_dyn(&f.information), vec![(f.from, to_dyn(&ja)), (f.to, to_dyn(&jb))])
            }
            Factor::PosePlane(f) => {
                let (x, p) = pose_plane_inputs(f, g)?;
                let (jx, jp) = jacobian_pose_plane(&f.observed, x, p);
                (
                    to_dyn(&f.information),
                    vec![(f.keyframe, to_dyn(&jx)), (f.plane, to_dyn(&jp))],
                )
            }
            Factor::RoomPlanePair(f) => {
                let (_, a, b) = pair_inputs(f, g)?;
                let (jr, ja, jb) = jacobian_room_plane_pair(a, b, f.axis);
                let mut blocks = vec![(f.room, to_dyn(&jr)), (f.planes[0], to_dyn(&ja))];
                if f.planes[1] == f.planes[0] {
                    blocks[1].1 += to_dyn(&jb);
                } else {
                    blocks.push((f.planes[1], to_dyn(&jb)));
                }
                (DMatrix::from_element(1, 1, f.information), blocks)
            }
            Factor::RoomPrior(f) => {
                let mut j = DMatrix::zeros(1, 2);
                j[(0, f.axis.index())] = 1.0;
                (DMatrix::from_element(1, 1, f.information), vec![(f.room, j)])
            }
            Factor::FloorRoom(f) => {
                let i = Matrix2::<f64>::identity();
                (
                    to_dyn(&f.information),
                    vec![(f.floor, to_dyn(&(-i))), (f.room, to_dyn(&i))],
                )
            }
            Factor::PoseAnchor(f) => {
                let j = jacobian_pose_anchor(&f.prior, &g.keyframe(f.keyframe)?.pose);
                (to_dyn(&f.information), vec![(f.keyframe, to_dyn(&j))])
            }
        };
        Ok(Linearization {
            residual,
            information,
            jacobians,
        })
    }
}

fn between_residual(f: &BetweenFactor, g: &FactorGraph) -> Result<Vector6<f64>, GraphError> {
    let a = &g.keyframe(f.from)?.pose;
    let b = &g.keyframe(f.to)?.pose;
    Ok(residual_odometry(&f.measurement, a, b))
}

fn pose_plane_inputs<'g>(f: &PosePlaneFactor, g: &'g FactorGraph) -> Result<(&'g Pose, &'g PlaneCoeffs), GraphError> {
    Ok((&g.keyframe(f.keyframe)?.pose, &g.plane(f.plane)?.coeffs))
}

fn pair_inputs<'g>(
    f: &RoomPlanePairFactor,
    g: &'g FactorGraph,
) -> Result<(&'g Vector2<f64>, &'g PlaneCoeffs, &'g PlaneCoeffs), GraphError> {
    Ok((
        &g.room(f.room)?.position,
        &g.plane(f.planes[0])?.coeffs,
        &g.plane(f.planes[1])?.coeffs,
    ))
}

fn floor_room_inputs<'g>(
    f: &FloorRoomFactor,
    g: &'g FactorGraph,
) -> Result<(&'g Vector2<f64>, &'g Vector2<f64>), GraphError> {
    Ok((&g.floor(f.floor)?.position, &g.room(f.room)?.position))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Frame;
    use nalgebra::Vector3;

    #[test]
    fn odometry_residual_examples() {
        let a = Pose::from_xyz_yaw(1.0, 2.0, 0.0, 0.3);
        let b = Pose::from_xyz_yaw(2.0, 2.5, 0.1, 0.9);
        assert!(residual_odometry(&a.between(&b), &a, &b).norm() < 1e-12);
        let id = Pose::identity();
        assert_eq!(residual_odometry(&id, &id, &id), Vector6::zeros());
        let r = residual_odometry(
            &Pose::from_translation(1.0, 0.0, 0.0),
            &id,
            &Pose::from_translation(2.0, 0.0, 0.0),
        );
        assert!((r - Vector6::new(0.0, 0.0, 0.0, 1.0, 0.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn pose_plane_residual_examples() {
        let x = Pose::from_xyz_yaw(0.5, -1.0, 1.0, 0.7);
        let obs = PlaneCoeffs::new(Vector3::new(0.2, 0.9, 0.1), 1.3, Frame::Sensor);
        let map = obs.transformed_to_map(&x);
        assert!(residual_pose_plane(&obs, &x, &map).norm() < 1e-12);
        // opposite orientation of the same plane is also a zero residual
        assert!(residual_pose_plane(&obs, &x, &map.flipped()).norm() < 1e-12);

        let id = Pose::identity();
        let same = PlaneCoeffs::new(Vector3::x(), -1.0, Frame::Map);
        let obs1 = PlaneCoeffs::new(Vector3::x(), -1.0, Frame::Sensor);
        assert!(residual_pose_plane(&obs1, &id, &same).norm() < 1e-15);

        let far = PlaneCoeffs::new(Vector3::x(), -3.0, Frame::Map);
        let r = residual_pose_plane(&obs1, &id, &far);
        assert!((r - Vector4::new(0.0, 0.0, 0.0, -2.0)).norm() < 1e-15);
    }

    #[test]
    fn room_pair_residual_examples() {
        let x0 = PlaneCoeffs::new(Vector3::x(), 0.0, Frame::Map);
        let x4 = PlaneCoeffs::new(-Vector3::x(), 4.0, Frame::Map);
        let r = residual_room_plane_pair(&Vector2::new(2.0, 0.0), &x0, &x4, Axis::X).unwrap();
        assert!(r.abs() < 1e-15);
        let r = residual_room_plane_pair(&Vector2::new(3.0, 0.0), &x0, &x4, Axis::X).unwrap();
        assert!((r - 1.0).abs() < 1e-15);

        let y0 = PlaneCoeffs::new(Vector3::y(), 0.0, Frame::Map);
        let y6 = PlaneCoeffs::new(-Vector3::y(), 6.0, Frame::Map);
        let r = residual_room_plane_pair(&Vector2::new(0.0, 3.0), &y0, &y6, Axis::Y).unwrap();
        assert!(r.abs() < 1e-15);

        assert!(residual_room_plane_pair(&Vector2::zeros(), &x0, &x0, Axis::X).is_err());
    }

    #[test]
    fn floor_room_residual_examples() {
        let d = Vector2::new(2.0, 3.0);
        assert_eq!(
            residual_floor_room(&Vector2::zeros(), &Vector2::new(2.0, 3.0), &d),
            Vector2::zeros()
        );
        assert_eq!(
            residual_floor_room(&Vector2::new(1.0, 1.0), &Vector2::new(2.0, 3.0), &d),
            Vector2::new(-1.0, -1.0)
        );
        let p = Vector2::new(4.0, -1.0);
        assert_eq!(residual_floor_room(&p, &p, &Vector2::zeros()), Vector2::zeros());
    }
}
