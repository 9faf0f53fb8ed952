//! Independent oracles and fixtures shared by the integration tests.
#![allow(dead_code)]

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector, Matrix2, Matrix4, Matrix6, UnitQuaternion, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sgraphs::config::PipelineConfig;
use sgraphs::freespace::{CellState, EsdfGrid, FreeSpaceGraph, OccupancyGrid};
use sgraphs::geometry::{Axis, Frame, PlaneCategory, PlaneCoeffs, Pose};
use sgraphs::graph::{
    BetweenFactor, Factor, FactorGraph, FloorRoomFactor, FloorVar, KeyframeVar, PlaneVar, PoseAnchorFactor,
    PosePlaneFactor, RoomKind, RoomPlanePairFactor, RoomPriorFactor, RoomVar, Variable, VariableId,
};
use sgraphs::pipeline::{run_slam, RunState};
use sgraphs::simulator::scenarios::Scenario;
use sgraphs::simulator::{simulate_trajectory, Dataset};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

// ---------------------------------------------------------------- Jacobians

/// The seven factor types, in the order the random generators cover them.
pub const FACTOR_NAMES: [&str; 7] = [
    "odometry",
    "pose_plane",
    "room_plane_pair",
    "room_prior",
    "floor_room",
    "loop",
    "pose_anchor",
];

pub fn unit_vector(r: &mut ChaCha8Rng) -> Vector3<f64> {
    loop {
        let v = Vector3::new(
            r.random_range(-1.0..1.0),
            r.random_range(-1.0..1.0),
            r.random_range(-1.0..1.0),
        );
        let n = v.norm();
        if n > 0.1 && n <= 1.0 {
            return v / n;
        }
    }
}

/// Rotation angle stays below 2.5 rad so the logarithm is well away from π.
pub fn random_pose(r: &mut ChaCha8Rng) -> Pose {
    let axis = unit_vector(r);
    let angle = r.random_range(0.0..2.5);
    let t = Vector3::new(
        r.random_range(-5.0..5.0),
        r.random_range(-5.0..5.0),
        r.random_range(-2.0..2.0),
    );
    Pose::new(UnitQuaternion::from_scaled_axis(axis * angle), t)
}

pub fn small_pose(r: &mut ChaCha8Rng, angle: f64, dist: f64) -> Pose {
    let axis = unit_vector(r);
    let t = unit_vector(r) * r.random_range(0.0..dist);
    Pose::new(UnitQuaternion::from_scaled_axis(axis * r.random_range(0.0..angle)), t)
}

fn keyframe(pose: Pose) -> Variable {
    Variable::Keyframe(KeyframeVar {
        pose,
        timestamp: 0.0,
        floor: 0,
    })
}

fn plane(coeffs: PlaneCoeffs) -> Variable {
    Variable::Plane(PlaneVar {
        coeffs,
        category: PlaneCategory::XVertical,
        floor: 0,
    })
}

fn room(position: Vector2<f64>) -> Variable {
    Variable::Room(RoomVar {
        position,
        kind: RoomKind::Finite,
        axis: None,
        floor: 0,
        x_planes: None,
        y_planes: None,
    })
}

fn vec2(r: &mut ChaCha8Rng, s: f64) -> Vector2<f64> {
    Vector2::new(r.random_range(-s..s), r.random_range(-s..s))
}

fn spd6(r: &mut ChaCha8Rng) -> Matrix6<f64> {
    let a = Matrix6::from_fn(|_, _| r.random_range(-1.0..1.0));
    a * a.transpose() + Matrix6::identity()
}

/// A graph holding exactly one factor of the named type, at a random
/// configuration with a non-zero residual.
pub fn random_factor_graph(name: &str, r: &mut ChaCha8Rng) -> (FactorGraph, Factor) {
    let mut g = FactorGraph::new();
    let factor = match name {
        "odometry" | "loop" => {
            let a = random_pose(r);
            let b = random_pose(r);
            let measurement = a.between(&b).compose(&small_pose(r, 0.5, 0.5));
            let from = g.add_variable(keyframe(a));
            let to = g.add_variable(keyframe(b));
            let f = BetweenFactor {
                from,
                to,
                measurement,
                information: spd6(r),
            };
            if name == "loop" {
                Factor::Loop(f)
            } else {
                Factor::Odometry(f)
            }
        }
        "pose_anchor" => {
            let prior = random_pose(r);
            let x = prior.compose(&small_pose(r, 1.0, 1.0));
            let keyframe = g.add_variable(keyframe(x));
            Factor::PoseAnchor(PoseAnchorFactor {
                keyframe,
                prior,
                information: spd6(r),
            })
        }
        "pose_plane" => {
            let x = random_pose(r);
            let map = PlaneCoeffs::new(unit_vector(r), r.random_range(-5.0..5.0), Frame::Map);
            let local = map.transformed_to_local(&x);
            let noisy = PlaneCoeffs::new(
                local.normal + unit_vector(r) * 0.1,
                local.d + r.random_range(-0.2..0.2),
                Frame::Sensor,
            );
            // either orientation of the observation is a valid measurement
            let observed = if r.random_bool(0.5) { noisy } else { noisy.flipped() };
            let keyframe = g.add_variable(keyframe(x));
            let plane = g.add_variable(plane(map));
            let a = Matrix4::from_fn(|_, _| r.random_range(-1.0..1.0));
            Factor::PosePlane(PosePlaneFactor {
                keyframe,
                plane,
                observed,
                information: a * a.transpose() + Matrix4::identity(),
            })
        }
        "room_plane_pair" => {
            let axis = if r.random_bool(0.5) { Axis::X } else { Axis::Y };
            let e = match axis {
                Axis::X => Vector3::x(),
                Axis::Y => Vector3::y(),
            };
            let lo = r.random_range(-5.0..0.0);
            let hi = lo + r.random_range(1.5..10.0);
            let tilt = |r: &mut ChaCha8Rng, n: Vector3<f64>| (n + unit_vector(r) * 0.2).normalize();
            let na = tilt(r, e);
            let nb = tilt(r, -e);
            let pa = PlaneCoeffs::through_point(na, &(e * lo), Frame::Map);
            let pb = PlaneCoeffs::through_point(nb, &(e * hi), Frame::Map);
            let a = g.add_variable(plane(pa));
            let b = g.add_variable(plane(pb));
            let room = g.add_variable(room(vec2(r, 5.0)));
            Factor::RoomPlanePair(RoomPlanePairFactor {
                room,
                planes: [a, b],
                axis,
                information: r.random_range(0.1..10.0),
            })
        }
        "room_prior" => {
            let room = g.add_variable(room(vec2(r, 5.0)));
            Factor::RoomPrior(RoomPriorFactor {
                room,
                axis: if r.random_bool(0.5) { Axis::X } else { Axis::Y },
                measurement: r.random_range(-5.0..5.0),
                information: r.random_range(0.01..10.0),
            })
        }
        "floor_room" => {
            let floor = g.add_variable(Variable::Floor(FloorVar {
                position: vec2(r, 5.0),
                floor: 0,
            }));
            let room = g.add_variable(room(vec2(r, 5.0)));
            let a = Matrix2::from_fn(|_, _| r.random_range(-1.0..1.0));
            Factor::FloorRoom(FloorRoomFactor {
                floor,
                room,
                offset: vec2(r, 3.0),
                information: a * a.transpose() + Matrix2::identity(),
            })
        }
        other => panic!("unknown factor type {other}"),
    };
    g.add_factor(factor.clone()).expect("valid factor");
    (g, factor)
}

/// Tangent perturbation written out independently of the library: keyframes
/// `R·Exp(ω)`, `t + v`; planes add to the raw `(n, d)`; rooms and floors add.
fn perturbed(v: &Variable, k: usize, h: f64) -> Variable {
    let mut v = v.clone();
    match &mut v {
        Variable::Keyframe(kf) => {
            if k < 3 {
                let mut w = Vector3::zeros();
                w[k] = h;
                kf.pose.rotation *= UnitQuaternion::from_scaled_axis(w);
            } else {
                kf.pose.translation[k - 3] += h;
            }
        }
        Variable::Plane(p) => {
            if k < 3 {
                p.coeffs.normal[k] += h;
            } else {
                p.coeffs.d += h;
            }
        }
        Variable::Room(rm) => rm.position[k] += h,
        Variable::Floor(f) => f.position[k] += h,
    }
    v
}

fn residual_with(g: &FactorGraph, f: &Factor, id: VariableId, k: usize, h: f64) -> DVector<f64> {
    let mut g2 = g.clone();
    let v = perturbed(g.variable(id).expect("variable exists"), k, h);
    g2.set_variable(id, v).expect("same kind");
    f.residual(&g2).expect("residual evaluates")
}

/// Worst relative Frobenius error between the analytic Jacobian blocks and
/// central differences with step `h`. The denominator is floored at 1 so
/// that all-zero blocks compare absolutely.
pub fn jacobian_error(g: &FactorGraph, f: &Factor, h: f64) -> f64 {
    let lin = f.linearize(g).expect("factor linearizes");
    let mut ids: Vec<VariableId> = f.variables().into_iter().map(|(id, _)| id).collect();
    ids.dedup();
    let blocks: BTreeMap<VariableId, DMatrix<f64>> = lin.jacobians.into_iter().collect();
    assert_eq!(blocks.len(), ids.len(), "one block per distinct variable");
    let mut worst: f64 = 0.0;
    for id in ids {
        let j = &blocks[&id];
        let dim = id.kind.dim();
        let mut fd = DMatrix::zeros(lin.residual.len(), dim);
        for k in 0..dim {
            let col = (residual_with(g, f, id, k, h) - residual_with(g, f, id, k, -h)) / (2.0 * h);
            fd.set_column(k, &col);
        }
        worst = worst.max((j - &fd).norm() / fd.norm().max(1.0));
    }
    worst
}

// ---------------------------------------------------------------- free space

/// Random occupancy grid: mostly free, with walls and unknown cells.
pub fn random_grid(r: &mut ChaCha8Rng, w: usize, h: usize, p_free: f64) -> OccupancyGrid {
    let mut g = OccupancyGrid::new(Vector2::new(-1.0, 2.0), 0.1, w, h);
    for iy in 0..h {
        for ix in 0..w {
            let u: f64 = r.random();
            let s = if u < p_free {
                CellState::Free
            } else if u < p_free + (1.0 - p_free) * 0.7 {
                CellState::Occupied
            } else {
                CellState::Unknown
            };
            g.set(ix, iy, s);
        }
    }
    g
}

/// Distance to the nearest non-free cell by exhaustive search.
pub fn brute_force_esdf(g: &OccupancyGrid) -> Vec<f64> {
    let blocked: Vec<(i64, i64)> = (0..g.height)
        .flat_map(|y| (0..g.width).map(move |x| (x, y)))
        .filter(|&(x, y)| g.get(x, y) != CellState::Free)
        .map(|(x, y)| (x as i64, y as i64))
        .collect();
    let mut out = Vec::with_capacity(g.width * g.height);
    for y in 0..g.height as i64 {
        for x in 0..g.width as i64 {
            let best = blocked.iter().map(|&(bx, by)| (bx - x).pow(2) + (by - y).pow(2)).min();
            out.push(match best {
                None => f64::INFINITY,
                Some(d2) => (d2 as f64).sqrt() * g.resolution,
            });
        }
    }
    out
}

/// Connected components of the vertices with clearance ≥ `threshold`,
/// found with union-find over the edge list; each sorted, ordered by their
/// smallest member, only those with at least `min_size` vertices.
pub fn brute_force_clusters(g: &FreeSpaceGraph, threshold: f64, min_size: usize) -> Vec<Vec<usize>> {
    let n = g.vertices.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], mut i: usize) -> usize {
        while p[i] != i {
            p[i] = p[p[i]];
            i = p[i];
        }
        i
    }
    let keep = |i: usize| g.vertices[i].clearance >= threshold;
    for &(a, b) in &g.edges {
        if keep(a) && keep(b) {
            let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
            parent[ra.max(rb)] = ra.min(rb);
        }
    }
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in (0..n).filter(|&i| keep(i)) {
        let root = find(&mut parent, i);
        groups.entry(root).or_default().push(i);
    }
    let mut out: Vec<Vec<usize>> = groups.into_values().filter(|c| c.len() >= min_size).collect();
    out.sort_by_key(|c| c[0]);
    out
}

pub fn esdf_values(e: &EsdfGrid) -> &[f64] {
    &e.distance
}

// ---------------------------------------------------------------- rooms

/// Wall pairs of the axis-aligned rectangle `[x0, x1] × [y0, y1]`, each
/// oriented toward the interior.
pub fn rectangle_walls(x0: f64, y0: f64, x1: f64, y1: f64) -> ([PlaneCoeffs; 2], [PlaneCoeffs; 2]) {
    let p = |n: Vector3<f64>, at: Vector3<f64>| PlaneCoeffs::through_point(n, &at, Frame::Map);
    (
        [
            p(Vector3::x(), Vector3::new(x0, 0.0, 0.0)),
            p(-Vector3::x(), Vector3::new(x1, 0.0, 0.0)),
        ],
        [
            p(Vector3::y(), Vector3::new(0.0, y0, 0.0)),
            p(-Vector3::y(), Vector3::new(0.0, y1, 0.0)),
        ],
    )
}

/// The same plane after translating the world by `t`.
pub fn translated(p: &PlaneCoeffs, t: &Vector3<f64>) -> PlaneCoeffs {
    PlaneCoeffs {
        normal: p.normal,
        d: p.d - p.normal.dot(t),
        frame: p.frame,
    }
}

// ---------------------------------------------------------------- scenarios

pub fn simulate(s: &Scenario) -> Dataset {
    let frames = simulate_trajectory(&s.world, &s.waypoints, &s.config).expect("scenario simulates");
    Dataset {
        world: s.world.clone(),
        frames,
    }
}

pub fn run(d: &Dataset, cfg: &PipelineConfig) -> RunState {
    run_slam(d, cfg).expect("pipeline runs")
}

/// Adds `offset` to the odometry translation of every frame from `start` on,
/// as a one-off slip of the wheel odometry would.
pub fn inject_odometry_bias(d: &mut Dataset, start: usize, offset: Vector3<f64>) {
    for f in d.frames.iter_mut().skip(start) {
        f.odometry.translation += offset;
    }
}

/// Pairs of same-floor, same-category, same-facing planes closer than `tol`
/// in coefficient distance; a clean map has none.
pub fn duplicate_plane_pairs(g: &FactorGraph, tol: f64) -> Vec<(VariableId, VariableId)> {
    let planes: Vec<(VariableId, PlaneVar)> = g
        .variables()
        .filter_map(|(id, v)| match v {
            Variable::Plane(p) => Some((*id, p.clone())),
            _ => None,
        })
        .collect();
    let mut out = Vec::new();
    for (i, (a, pa)) in planes.iter().enumerate() {
        for (b, pb) in &planes[i + 1..] {
            let same_kind = pa.floor == pb.floor && pa.category == pb.category;
            let same_side = pa.coeffs.normal.dot(&pb.coeffs.normal) > 0.0;
            if same_kind && same_side && pa.coeffs.coefficient_distance(&pb.coeffs) < tol {
                out.push((*a, *b));
            }
        }
    }
    out
}
