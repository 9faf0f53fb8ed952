mod common;

use nalgebra::{UnitQuaternion, Vector3, Vector6};
use proptest::prelude::*;

use common::{rectangle_walls, translated};
use sgraphs::geometry::{so3_exp, so3_log, Frame, PlaneCoeffs, Pose};
use sgraphs::scene::compute_room_center_finite;

fn pose() -> impl Strategy<Value = Pose> {
    (
        prop::array::uniform3(-1.0f64..1.0),
        0.0f64..3.0,
        prop::array::uniform3(-10.0f64..10.0),
    )
        .prop_filter("axis must be non-degenerate", |(a, _, _)| {
            Vector3::from(*a).norm() > 0.1
        })
        .prop_map(|(a, angle, t)| {
            let axis = Vector3::from(a).normalize();
            Pose::new(UnitQuaternion::from_scaled_axis(axis * angle), Vector3::from(t))
        })
}

fn point() -> impl Strategy<Value = Vector3<f64>> {
    prop::array::uniform3(-10.0f64..10.0).prop_map(Vector3::from)
}

fn plane() -> impl Strategy<Value = PlaneCoeffs> {
    (point(), -10.0f64..10.0)
        .prop_filter("normal must be non-zero", |(n, _)| n.norm() > 0.1)
        .prop_map(|(n, d)| PlaneCoeffs::new(n, d, Frame::Map))
}

proptest! {
    #[test]
    fn exp_inverts_log(p in pose()) {
        let back = Pose::exp(&p.log());
        prop_assert!(back.rotation.angle_to(&p.rotation) < 1e-9);
        prop_assert!((back.translation - p.translation).norm() < 1e-12);
    }

    #[test]
    fn so3_log_inverts_exp(w in prop::array::uniform3(-1.5f64..1.5)) {
        let w = Vector3::from(w);
        prop_assert!((so3_log(&so3_exp(&w)) - w).norm() < 1e-9);
    }

    #[test]
    fn compose_is_associative(a in pose(), b in pose(), c in pose(), x in point()) {
        let l = a.compose(&b).compose(&c).transform_point(&x);
        let r = a.compose(&b.compose(&c)).transform_point(&x);
        prop_assert!((l - r).norm() < 1e-9);
    }

    #[test]
    fn between_undoes_compose(a in pose(), b in pose()) {
        let back = a.compose(&a.between(&b));
        prop_assert!(back.rotation.angle_to(&b.rotation) < 1e-9);
        prop_assert!((back.translation - b.translation).norm() < 1e-9);
        prop_assert!(a.between(&a).log().norm() < 1e-12);
    }

    #[test]
    fn retract_by_zero_is_identity(p in pose()) {
        let q = p.retract(Vector6::zeros().as_slice());
        prop_assert!(q.rotation.angle_to(&p.rotation) < 1e-12);
        prop_assert_eq!(q.translation, p.translation);
    }

    #[test]
    fn plane_transforms_round_trip(pl in plane(), x in pose(), q in point()) {
        let local = pl.transformed_to_local(&x);
        let back = local.transformed_to_map(&x);
        prop_assert!(back.coefficient_distance(&pl) < 1e-9);
        // a point keeps its signed distance when both move together
        let q_local = x.inverse().transform_point(&q);
        prop_assert!((local.signed_distance(&q_local) - pl.signed_distance(&q)).abs() < 1e-9);
    }

    #[test]
    fn facing_puts_viewpoint_on_positive_side(pl in plane(), v in point()) {
        prop_assume!(pl.signed_distance(&v).abs() > 1e-6);
        prop_assert!(pl.facing(&v).signed_distance(&v) > 0.0);
        prop_assert!(pl.closest_point().norm() - pl.d.abs() < 1e-9);
    }

    #[test]
    fn room_center_is_equivariant_and_inside(
        x0 in -50.0f64..50.0, w in 1.5f64..15.0,
        y0 in -50.0f64..50.0, h in 1.5f64..15.0,
        t in prop::array::uniform3(-100.0f64..100.0),
    ) {
        let (xs, ys) = rectangle_walls(x0, y0, x0 + w, y0 + h);
        let c = compute_room_center_finite([&xs[0], &xs[1]], [&ys[0], &ys[1]]).unwrap();
        prop_assert!((c.x - (x0 + w / 2.0)).abs() < 1e-9 && (c.y - (y0 + h / 2.0)).abs() < 1e-9);
        let t = Vector3::from(t);
        let (xt, yt) = (xs.map(|p| translated(&p, &t)), ys.map(|p| translated(&p, &t)));
        let ct = compute_room_center_finite([&xt[0], &xt[1]], [&yt[0], &yt[1]]).unwrap();
        prop_assert!((ct - c - t.xy()).norm() < 1e-9);
        prop_assert!(c.x > x0 && c.x < x0 + w && c.y > y0 && c.y < y0 + h);
    }
}
