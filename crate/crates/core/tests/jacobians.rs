mod common;

use common::{jacobian_error, random_factor_graph, rng};

const STEP: f64 = 1e-6;
const TOLERANCE: f64 = 1e-5;

fn check(name: &str) {
    let mut r = rng(0xFAC7 ^ name.len() as u64);
    for trial in 0..100 {
        let (g, f) = random_factor_graph(name, &mut r);
        let err = jacobian_error(&g, &f, STEP);
        assert!(err < TOLERANCE, "{name} trial {trial}: relative error {err:e}");
    }
}

#[test]
fn odometry_matches_central_differences() {
    check("odometry");
}

#[test]
fn loop_matches_central_differences() {
    check("loop");
}

#[test]
fn pose_anchor_matches_central_differences() {
    check("pose_anchor");
}

#[test]
fn pose_plane_matches_central_differences() {
    check("pose_plane");
}

#[test]
fn room_plane_pair_matches_central_differences() {
    check("room_plane_pair");
}

#[test]
fn room_prior_matches_central_differences() {
    check("room_prior");
}

#[test]
fn floor_room_matches_central_differences() {
    check("floor_room");
}
