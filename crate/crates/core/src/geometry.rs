//! Rigid-body and plane algebra shared by every stage of the pipeline.
//!
//! Poses are stored as a unit quaternion plus a translation. Planes use the
//! Hessian normal form `n·p + d = 0` with a unit normal.

use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector2, Vector3, Vector4, Vector6};
use serde::{Deserialize, Serialize};

const SMALL_ANGLE: f64 = 1e-10;

/// Skew-symmetric cross-product matrix `[v]×`.
pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Exponential map from a rotation vector to a unit quaternion.
pub fn so3_exp(omega: &Vector3<f64>) -> UnitQuaternion<f64> {
    UnitQuaternion::from_scaled_axis(*omega)
}

/// Logarithm of a rotation, returned as a rotation vector with angle in `[0, π]`.
pub fn so3_log(q: &UnitQuaternion<f64>) -> Vector3<f64> {
    // Pick the hemisphere with w >= 0 so the angle never exceeds π.
    let q = if q.w < 0.0 {
        UnitQuaternion::new_unchecked(-q.into_inner())
    } else {
        *q
    };
    let v = q.imag();
    let s = v.norm();
    if s < SMALL_ANGLE {
        return v * 2.0;
    }
    let angle = 2.0 * s.atan2(q.w);
    v * (angle / s)
}

/// Inverse of the right Jacobian of SO(3) evaluated at `phi`.
pub fn so3_right_jacobian_inv(phi: &Vector3<f64>) -> Matrix3<f64> {
    let theta = phi.norm();
    let k = skew(phi);
    if theta < 1e-6 {
        return Matrix3::identity() + 0.5 * k + (1.0 / 12.0) * k * k;
    }
    let coeff = 1.0 / (theta * theta) - (1.0 + theta.cos()) / (2.0 * theta * theta.sin());
    Matrix3::identity() + 0.5 * k + coeff * k * k
}

/// SE(3) rigid transform.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose {
    pub rotation: UnitQuaternion<f64>,
    pub translation: Vector3<f64>,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            rotation: UnitQuaternion::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: UnitQuaternion<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation: renormalize(rotation),
            translation,
        }
    }

    /// Builds a pose from raw `(w, x, y, z)` quaternion components, normalizing them.
    pub fn from_wxyz(w: f64, x: f64, y: f64, z: f64, translation: Vector3<f64>) -> Self {
        Self {
            rotation: UnitQuaternion::from_quaternion(Quaternion::new(w, x, y, z)),
            translation,
        }
    }

    pub fn from_translation(x: f64, y: f64, z: f64) -> Self {
        Self {
            rotation: UnitQuaternion::identity(),
            translation: Vector3::new(x, y, z),
        }
    }

    /// Pure rotation about +z.
    pub fn from_yaw(yaw: f64) -> Self {
        Self {
            rotation: UnitQuaternion::from_axis_angle(&Vector3::z_axis(), yaw),
            translation: Vector3::zeros(),
        }
    }

    pub fn from_xyz_yaw(x: f64, y: f64, z: f64, yaw: f64) -> Self {
        Self {
            rotation: UnitQuaternion::from_axis_angle(&Vector3::z_axis(), yaw),
            translation: Vector3::new(x, y, z),
        }
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        self.rotation.to_rotation_matrix().into_inner()
    }

    /// `self ∘ other`.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: renormalize(self.rotation * other.rotation),
            translation: self.translation + self.rotation * other.translation,
        }
    }

    pub fn inverse(&self) -> Pose {
        let inv = self.rotation.inverse();
        Pose {
            rotation: renormalize(inv),
            translation: -(inv * self.translation),
        }
    }

    /// `self⁻¹ ∘ other`: the pose of `other` expressed in the frame of `self`.
    pub fn between(&self, other: &Pose) -> Pose {
        self.inverse().compose(other)
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// Rotation angle in radians, in `[0, π]`.
    pub fn rotation_angle(&self) -> f64 {
        so3_log(&self.rotation).norm()
    }

    /// Decoupled logarithm `(Log(R), t)` with the rotation part first.
    pub fn log(&self) -> Vector6<f64> {
        let w = so3_log(&self.rotation);
        Vector6::new(
            w.x,
            w.y,
            w.z,
            self.translation.x,
            self.translation.y,
            self.translation.z,
        )
    }

    /// Inverse of [`Pose::log`].
    pub fn exp(v: &Vector6<f64>) -> Pose {
        Pose {
            rotation: so3_exp(&Vector3::new(v[0], v[1], v[2])),
            translation: Vector3::new(v[3], v[4], v[5]),
        }
    }

    /// Manifold update used by the optimizer: `R ← R·Exp(ω)`, `t ← t + v` for
    /// `delta = (ω, v)`.
    pub fn retract(&self, delta: &[f64]) -> Pose {
        let omega = Vector3::new(delta[0], delta[1], delta[2]);
        Pose {
            rotation: renormalize(self.rotation * so3_exp(&omega)),
            translation: self.translation + Vector3::new(delta[3], delta[4], delta[5]),
        }
    }

    pub fn yaw(&self) -> f64 {
        self.rotation.euler_angles().2
    }
}

impl std::ops::Mul for Pose {
    type Output = Pose;
    fn mul(self, rhs: Pose) -> Pose {
        self.compose(&rhs)
    }
}

fn renormalize(q: UnitQuaternion<f64>) -> UnitQuaternion<f64> {
    UnitQuaternion::new_normalize(q.into_inner())
}

/// Convenience free-function form of [`Pose::compose`].
pub fn pose_compose(a: &Pose, b: &Pose) -> Pose {
    a.compose(b)
}

/// Convenience free-function form of [`Pose::between`].
pub fn pose_between(a: &Pose, b: &Pose) -> Pose {
    a.between(b)
}

/// Coordinate frame a plane is expressed in.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Frame {
    /// Global map frame.
    Map,
    /// Sensor frame of the keyframe that observed the plane.
    Sensor,
}

/// Horizontal axis a wall is aligned with (the dominant component of its normal).
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    X,
    Y,
}

impl Axis {
    pub fn index(self) -> usize {
        match self {
            Axis::X => 0,
            Axis::Y => 1,
        }
    }

    pub fn other(self) -> Axis {
        match self {
            Axis::X => Axis::Y,
            Axis::Y => Axis::X,
        }
    }
}

/// Semantic class of a plane by the orientation of its normal.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlaneCategory {
    XVertical,
    YVertical,
    Horizontal,
}

impl PlaneCategory {
    pub fn axis(self) -> Option<Axis> {
        match self {
            PlaneCategory::XVertical => Some(Axis::X),
            PlaneCategory::YVertical => Some(Axis::Y),
            PlaneCategory::Horizontal => None,
        }
    }
}

/// Infinite plane `normal·p + d = 0`.
///
/// The normal is unit length. Two orientations describe the same plane; the
/// canonical one (see [`PlaneCoeffs::canonical`]) makes the largest-magnitude
/// normal component positive, preferring x over y over z on ties.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PlaneCoeffs {
    pub normal: Vector3<f64>,
    pub d: f64,
    pub frame: Frame,
}

impl PlaneCoeffs {
    /// Builds a plane from any non-zero normal; both normal and offset are
    /// scaled so the normal is unit length.
    pub fn new(normal: Vector3<f64>, d: f64, frame: Frame) -> Self {
        let norm = normal.norm();
        Self {
            normal: normal / norm,
            d: d / norm,
            frame,
        }
    }

    pub fn from_vector(v: &Vector4<f64>, frame: Frame) -> Self {
        Self::new(Vector3::new(v[0], v[1], v[2]), v[3], frame)
    }

    /// Plane through `point` with the given normal.
    pub fn through_point(normal: Vector3<f64>, point: &Vector3<f64>, frame: Frame) -> Self {
        let n = normal.normalize();
        Self {
            normal: n,
            d: -n.dot(point),
            frame,
        }
    }

    pub fn to_vector(&self) -> Vector4<f64> {
        Vector4::new(self.normal.x, self.normal.y, self.normal.z, self.d)
    }

    pub fn flipped(&self) -> Self {
        Self {
            normal: -self.normal,
            d: -self.d,
            frame: self.frame,
        }
    }

    pub fn canonical(&self) -> Self {
        let a = self.normal.map(f64::abs);
        let dominant = if a.x >= a.y && a.x >= a.z {
            self.normal.x
        } else if a.y >= a.z {
            self.normal.y
        } else {
            self.normal.z
        };
        if dominant < 0.0 {
            self.flipped()
        } else {
            *self
        }
    }

    pub fn is_canonical(&self) -> bool {
        self.canonical().normal == self.normal
    }

    pub fn signed_distance(&self, p: &Vector3<f64>) -> f64 {
        self.normal.dot(p) + self.d
    }

    /// Orientation whose positive side contains `viewpoint`.
    pub fn facing(&self, viewpoint: &Vector3<f64>) -> Self {
        if self.signed_distance(viewpoint) < 0.0 {
            self.flipped()
        } else {
            *self
        }
    }

    /// Orientation whose normal agrees (non-negative dot product) with `reference`.
    pub fn aligned_with(&self, reference: &PlaneCoeffs) -> Self {
        if self.normal.dot(&reference.normal) < 0.0 {
            self.flipped()
        } else {
            *self
        }
    }

    /// Point of the plane closest to the origin, `−d·n`.
    pub fn closest_point(&self) -> Vector3<f64> {
        -self.d * self.normal
    }

    pub fn closest_point_2d(&self) -> Vector2<f64> {
        let c = self.closest_point();
        Vector2::new(c.x, c.y)
    }

    /// Sign-aligned l2 distance between coefficient vectors.
    pub fn coefficient_distance(&self, other: &PlaneCoeffs) -> f64 {
        let aligned = other.aligned_with(self);
        (self.to_vector() - aligned.to_vector()).norm()
    }

    /// Same plane expressed in the map frame, keeping its orientation.
    pub fn transformed_to_map(&self, pose: &Pose) -> Self {
        let normal = pose.rotation * self.normal;
        Self {
            normal,
            d: self.d - normal.dot(&pose.translation),
            frame: Frame::Map,
        }
    }

    /// Same plane expressed in the sensor frame of `pose`, keeping its orientation.
    pub fn transformed_to_local(&self, pose: &Pose) -> Self {
        Self {
            normal: pose.rotation.inverse() * self.normal,
            d: self.d + self.normal.dot(&pose.translation),
            frame: Frame::Sensor,
        }
    }
}

/// Maps a sensor-frame plane into the map frame; `pose` is map-from-sensor.
/// The result is canonicalized.
pub fn plane_to_map(pose: &Pose, local: &PlaneCoeffs) -> PlaneCoeffs {
    local.transformed_to_map(pose).canonical()
}

/// Inverse of [`plane_to_map`]. The result is canonicalized.
pub fn plane_to_local(pose: &Pose, global: &PlaneCoeffs) -> PlaneCoeffs {
    global.transformed_to_local(pose).canonical()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    fn close(a: &Pose, b: &Pose, tol: f64) -> bool {
        a.between(b).rotation_angle() < tol && (a.translation - b.translation).norm() < tol
    }

    #[test]
    fn compose_examples() {
        let t = Pose::from_xyz_yaw(1.0, 2.0, 3.0, 0.4);
        assert!(close(&Pose::identity().compose(&t), &t, 1e-12));

        let x1 = Pose::from_translation(1.0, 0.0, 0.0);
        assert!(close(&x1.compose(&x1), &Pose::from_translation(2.0, 0.0, 0.0), 1e-12));

        let r = Pose::from_yaw(FRAC_PI_2).compose(&x1);
        assert!((r.translation - Vector3::new(0.0, 1.0, 0.0)).norm() < 1e-12);
        assert!(r.rotation.angle_to(&Pose::from_yaw(FRAC_PI_2).rotation) < 1e-12);
    }

    #[test]
    fn between_examples() {
        let t = Pose::from_xyz_yaw(1.0, -2.0, 0.5, 1.1);
        assert!(close(&t.between(&t), &Pose::identity(), 1e-12));

        let x3 = Pose::from_translation(3.0, 0.0, 0.0);
        assert!(close(&Pose::identity().between(&x3), &x3, 1e-12));

        let yaw = Pose::from_yaw(FRAC_PI_2);
        let x1 = Pose::from_translation(1.0, 0.0, 0.0);
        assert!(close(&yaw.between(&yaw.compose(&x1)), &x1, 1e-12));
    }

    #[test]
    fn plane_examples() {
        let any = PlaneCoeffs::new(Vector3::new(0.3, -0.8, 0.2), 1.7, Frame::Sensor);
        let mapped = plane_to_map(&Pose::identity(), &any);
        assert!(mapped.coefficient_distance(&any) < 1e-12);

        let pose = Pose::from_translation(2.0, 0.0, 0.0);
        let local = PlaneCoeffs::new(Vector3::x(), -1.0, Frame::Sensor);
        let m = plane_to_map(&pose, &local);
        assert!((m.normal - Vector3::x()).norm() < 1e-12);
        assert!((m.d + 3.0).abs() < 1e-12);
        assert_eq!(m.frame, Frame::Map);

        let back = plane_to_local(&pose, &m);
        assert!((back.d + 1.0).abs() < 1e-12);
        assert_eq!(back.frame, Frame::Sensor);

        let yaw = Pose::from_yaw(FRAC_PI_2);
        let r = plane_to_map(&yaw, &PlaneCoeffs::new(Vector3::x(), 0.0, Frame::Sensor));
        assert!((r.normal - Vector3::y()).norm() < 1e-12);
        assert!(r.d.abs() < 1e-12);
    }

    #[test]
    fn canonical_sign_rules() {
        let p = PlaneCoeffs::new(Vector3::new(-1.0, 0.2, 0.1), 2.0, Frame::Map).canonical();
        assert!(p.normal.x > 0.0 && (p.d + 2.0 / p.normal.norm()).abs() < 1.0);
        let q = PlaneCoeffs::new(Vector3::new(0.1, -0.9, 0.3), 1.0, Frame::Map).canonical();
        assert!(q.normal.y > 0.0);
        let z = PlaneCoeffs::new(Vector3::new(0.0, 0.0, -1.0), 1.0, Frame::Map).canonical();
        assert!(z.normal.z > 0.0 && (z.d + 1.0).abs() < 1e-15);
        // x/y tie prefers x
        let tie = PlaneCoeffs::new(Vector3::new(-1.0, 1.0, 0.0), 0.0, Frame::Map).canonical();
        assert!(tie.normal.x > 0.0);
    }

    #[test]
    fn so3_log_exp_roundtrip() {
        let w = Vector3::new(0.3, -1.2, 2.0);
        assert!((so3_log(&so3_exp(&w)) - w).norm() < 1e-12);
        let tiny = Vector3::new(1e-12, 0.0, -2e-12);
        assert!((so3_log(&so3_exp(&tiny)) - tiny).norm() < 1e-20);
    }

    #[test]
    fn facing_orients_toward_viewpoint() {
        let p = PlaneCoeffs::new(Vector3::x(), -4.0, Frame::Map);
        let f = p.facing(&Vector3::new(2.0, 0.0, 0.0));
        assert!(f.normal.x < 0.0 && f.signed_distance(&Vector3::new(2.0, 0.0, 0.0)) > 0.0);
        assert_eq!(f.closest_point(), p.closest_point());
    }
}
