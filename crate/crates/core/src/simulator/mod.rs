//! Deterministic indoor LiDAR datasets: axis-aligned extruded rectangle
//! worlds, raycast scans, drifting odometry and ground-truth surfaces.

mod dataset;
pub mod scenarios;
mod world;

use std::f64::consts::PI;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use dataset::{read_dataset, write_dataset, Dataset, DATASET_FILES};
pub use world::{Aabb, Door, FloorPlan, Rect, World};

use crate::geometry::Pose;
use crate::perception::{PerceptionError, PointCloud};
use crate::trajectory::TrajectoryError;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid world: {0}")]
    InvalidWorld(String),
    #[error("pose ({x}, {y}, {z}) is inside a wall or outside the world")]
    PoseInWall { x: f64, y: f64, z: f64 },
    #[error("waypoint {index} is inside a wall or outside the world")]
    WaypointInWall { index: usize },
    #[error("waypoint line {line}: expected `x y [floor]`")]
    BadWaypoint { line: usize },
    #[error("waypoint refers to unknown floor {0}")]
    UnknownFloor(u32),
    #[error("bad dataset: {0}")]
    BadDataset(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Trajectory(#[from] TrajectoryError),
    #[error(transparent)]
    Perception(#[from] PerceptionError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub h_rays: usize,
    pub v_rays: usize,
    /// Elevations are spread evenly over `±max_elevation_deg`.
    pub max_elevation_deg: f64,
    pub max_range: f64,
    pub range_sigma: f64,
    /// Per-step odometry noise on x and y.
    pub sigma_t: f64,
    /// Per-step odometry noise on yaw.
    pub sigma_rot_deg: f64,
    pub step: f64,
    /// Largest in-place heading change between frames.
    pub turn_step_deg: f64,
    pub dt: f64,
    pub sensor_height: f64,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            h_rays: 360,
            v_rays: 16,
            max_elevation_deg: 15.0,
            max_range: 30.0,
            range_sigma: 0.01,
            sigma_t: 0.01,
            sigma_rot_deg: 0.2,
            step: 0.2,
            turn_step_deg: 10.0,
            dt: 0.1,
            sensor_height: 1.0,
            seed: 0,
        }
    }
}

impl SimConfig {
    pub fn noiseless() -> Self {
        Self {
            range_sigma: 0.0,
            sigma_t: 0.0,
            sigma_rot_deg: 0.0,
            ..Self::default()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Waypoint {
    pub x: f64,
    pub y: f64,
    pub floor: u32,
}

impl Waypoint {
    pub fn new(x: f64, y: f64, floor: u32) -> Self {
        Self { x, y, floor }
    }
}

/// One `x y [floor]` waypoint per line; `#` starts a comment.
pub fn parse_waypoints(text: &str) -> Result<Vec<Waypoint>, SimError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let bad = || SimError::BadWaypoint { line: i + 1 };
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() != 2 && toks.len() != 3 {
            return Err(bad());
        }
        let x: f64 = toks[0].parse().map_err(|_| bad())?;
        let y: f64 = toks[1].parse().map_err(|_| bad())?;
        let floor: u32 = match toks.get(2) {
            Some(t) => t.parse().map_err(|_| bad())?,
            None => 0,
        };
        if !x.is_finite() || !y.is_finite() {
            return Err(bad());
        }
        out.push(Waypoint { x, y, floor });
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScanFrame {
    pub timestamp: f64,
    pub ground_truth: Pose,
    pub odometry: Pose,
    /// Sensor-frame hits.
    pub cloud: PointCloud,
}

/// Unit ray directions in the sensor frame, azimuth-major.
pub fn ray_directions(cfg: &SimConfig) -> Vec<Vector3<f64>> {
    let mut dirs = Vec::with_capacity(cfg.h_rays * cfg.v_rays);
    let max_el = cfg.max_elevation_deg.to_radians();
    for i in 0..cfg.h_rays {
        let az = 2.0 * PI * i as f64 / cfg.h_rays as f64;
        for j in 0..cfg.v_rays {
            let el = if cfg.v_rays == 1 {
                0.0
            } else {
                -max_el + 2.0 * max_el * j as f64 / (cfg.v_rays - 1) as f64
            };
            dirs.push(Vector3::new(el.cos() * az.cos(), el.cos() * az.sin(), el.sin()));
        }
    }
    dirs
}

/// Per-frame scan noise stream.
pub fn scan_rng(seed: u64, frame: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed.wrapping_add(frame))
}

/// Odometry noise stream; draws `(x, y, yaw)` standard normals per step.
pub fn odometry_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    rng
}

/// Casts every ray from `pose` against the walls, floor and ceiling of the
/// floor containing the sensor. One range-noise sample is drawn per ray, hit
/// or not, so the stream position depends only on the ray index.
pub fn raycast_scan(world: &World, pose: &Pose, cfg: &SimConfig, rng: &mut impl Rng) -> Result<PointCloud, SimError> {
    let o = pose.translation;
    let in_wall = || SimError::PoseInWall { x: o.x, y: o.y, z: o.z };
    let plan = world.floor_containing(o.z).ok_or_else(in_wall)?;
    if !world.is_free(plan, o.x, o.y) {
        return Err(in_wall());
    }
    let boxes = world.wall_boxes(plan);
    let z_floor = plan.z_base;
    let z_ceiling = plan.z_base + world.wall_height;
    let r = pose.rotation_matrix();
    let mut points = Vec::new();
    for ds in ray_directions(cfg) {
        let noise: f64 = rng.sample::<f64, _>(StandardNormal) * cfg.range_sigma;
        let d = r * ds;
        let mut best = f64::INFINITY;
        if d.z < -1e-12 {
            best = (z_floor - o.z) / d.z;
        } else if d.z > 1e-12 {
            best = (z_ceiling - o.z) / d.z;
        }
        for b in &boxes {
            if let Some(t) = b.ray_entry(&o, &d) {
                best = best.min(t);
            }
        }
        if best <= cfg.max_range {
            points.push(ds * (best + noise));
        }
    }
    Ok(PointCloud::new(points))
}

fn wrap_angle(a: f64) -> f64 {
    let mut a = a % (2.0 * PI);
    if a > PI {
        a -= 2.0 * PI;
    } else if a < -PI {
        a += 2.0 * PI;
    }
    a
}

/// Ground-truth sensor poses along the waypoints: in-place turns toward each
/// leg, then straight motion at `cfg.step`. A floor change teleports to the
/// next waypoint keeping the heading.
pub fn ground_truth_poses(world: &World, waypoints: &[Waypoint], cfg: &SimConfig) -> Result<Vec<Pose>, SimError> {
    for (i, w) in waypoints.iter().enumerate() {
        let plan = world.floor(w.floor).ok_or(SimError::UnknownFloor(w.floor))?;
        if !world.is_free(plan, w.x, w.y) {
            return Err(SimError::WaypointInWall { index: i });
        }
    }
    let Some(first) = waypoints.first() else {
        return Ok(Vec::new());
    };
    let z_of = |w: &Waypoint| world.floor(w.floor).map(|p| p.z_base).unwrap_or(0.0) + cfg.sensor_height;
    let heading_to = |a: &Waypoint, b: &Waypoint| (b.y - a.y).atan2(b.x - a.x);

    let mut yaw = waypoints
        .iter()
        .skip(1)
        .find(|w| w.floor == first.floor && (w.x != first.x || w.y != first.y))
        .map(|w| heading_to(first, w))
        .unwrap_or(0.0);
    let mut poses = vec![Pose::from_xyz_yaw(first.x, first.y, z_of(first), yaw)];
    let turn = cfg.turn_step_deg.to_radians();
    for pair in waypoints.windows(2) {
        let (a, b) = (&pair[0], &pair[1]);
        if a.floor != b.floor {
            poses.push(Pose::from_xyz_yaw(b.x, b.y, z_of(b), yaw));
            continue;
        }
        let len = (b.x - a.x).hypot(b.y - a.y);
        if len == 0.0 {
            continue;
        }
        let target = heading_to(a, b);
        let delta = wrap_angle(target - yaw);
        let turns = (delta.abs() / turn - 1e-9).ceil().max(0.0) as usize;
        for k in 1..=turns {
            let y = yaw + delta * k as f64 / turns as f64;
            poses.push(Pose::from_xyz_yaw(a.x, a.y, z_of(a), y));
        }
        yaw = target;
        let steps = (len / cfg.step - 1e-9).ceil().max(1.0) as usize;
        for k in 1..=steps {
            let s = k as f64 / steps as f64;
            poses.push(Pose::from_xyz_yaw(
                a.x + s * (b.x - a.x),
                a.y + s * (b.y - a.y),
                z_of(a),
                yaw,
            ));
        }
    }
    Ok(poses)
}

/// Composes ground-truth increments perturbed by planar Gaussian noise.
/// Without noise the ground truth is returned unchanged.
pub fn odometry_from_ground_truth(gt: &[Pose], cfg: &SimConfig) -> Vec<Pose> {
    if cfg.sigma_t == 0.0 && cfg.sigma_rot_deg == 0.0 {
        return gt.to_vec();
    }
    let mut rng = odometry_rng(cfg.seed);
    let mut out = Vec::with_capacity(gt.len());
    let Some(first) = gt.first() else {
        return out;
    };
    out.push(*first);
    for w in gt.windows(2) {
        let nx: f64 = rng.sample::<f64, _>(StandardNormal) * cfg.sigma_t;
        let ny: f64 = rng.sample::<f64, _>(StandardNormal) * cfg.sigma_t;
        let nyaw: f64 = rng.sample::<f64, _>(StandardNormal) * cfg.sigma_rot_deg.to_radians();
        let inc = w[0].between(&w[1]).compose(&Pose::from_xyz_yaw(nx, ny, 0.0, nyaw));
        let next = out.last().expect("seeded with first pose").compose(&inc);
        out.push(next);
    }
    out
}

/// Full dataset generation. Scans are raycast in parallel with per-frame
/// noise streams, so the result does not depend on scheduling.
pub fn simulate_trajectory(world: &World, waypoints: &[Waypoint], cfg: &SimConfig) -> Result<Vec<ScanFrame>, SimError> {
    world.validate()?;
    let gt = ground_truth_poses(world, waypoints, cfg)?;
    let odom = odometry_from_ground_truth(&gt, cfg);
    let clouds: Vec<PointCloud> = gt
        .par_iter()
        .enumerate()
        .map(|(i, p)| raycast_scan(world, p, cfg, &mut scan_rng(cfg.seed, i as u64)))
        .collect::<Result<_, _>>()?;
    Ok(gt
        .into_iter()
        .zip(odom)
        .zip(clouds)
        .enumerate()
        .map(|(i, ((g, o), c))| ScanFrame {
            timestamp: i as f64 * cfg.dt,
            ground_truth: g,
            odometry: o,
            cloud: c,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn box_room() -> World {
        World::single_floor(vec![Rect::new(0.0, 0.0, 4.0, 4.0)], Vec::new())
    }

    #[test]
    fn center_ray_hits_inner_wall_face() {
        let w = box_room();
        let cfg = SimConfig {
            h_rays: 4,
            v_rays: 1,
            ..SimConfig::noiseless()
        };
        let pose = Pose::from_translation(2.0, 2.0, 1.0);
        let cloud = raycast_scan(&w, &pose, &cfg, &mut scan_rng(0, 0)).unwrap();
        assert_eq!(cloud.len(), 4);
        assert!((cloud.points[0] - Vector3::new(1.95, 0.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn ray_through_door_beyond_range_is_dropped() {
        let w = World::single_floor(
            vec![Rect::new(0.0, 0.0, 4.0, 4.0), Rect::new(4.0, 0.0, 40.0, 4.0)],
            vec![Door::new(4.0, 2.0, 1.0)],
        );
        let cfg = SimConfig {
            h_rays: 4,
            v_rays: 1,
            max_range: 10.0,
            ..SimConfig::noiseless()
        };
        let cloud = raycast_scan(&w, &Pose::from_translation(2.0, 2.0, 1.0), &cfg, &mut scan_rng(0, 0)).unwrap();
        assert_eq!(cloud.len(), 3);
        assert!(cloud.points.iter().all(|p| p.x <= 0.0 || p.x.abs() < 1e-12));
    }

    #[test]
    fn pose_in_wall_is_rejected() {
        let w = box_room();
        let cfg = SimConfig::noiseless();
        let r = raycast_scan(&w, &Pose::from_translation(4.0, 2.0, 1.0), &cfg, &mut scan_rng(0, 0));
        assert!(matches!(r, Err(SimError::PoseInWall { .. })));
        let r = raycast_scan(&w, &Pose::from_translation(2.0, 2.0, 7.0), &cfg, &mut scan_rng(0, 0));
        assert!(matches!(r, Err(SimError::PoseInWall { .. })));
    }

    #[test]
    fn trajectory_turns_then_steps() {
        let w = box_room();
        let cfg = SimConfig::noiseless();
        let wps = [
            Waypoint::new(1.0, 1.0, 0),
            Waypoint::new(3.0, 1.0, 0),
            Waypoint::new(3.0, 3.0, 0),
        ];
        let poses = ground_truth_poses(&w, &wps, &cfg).unwrap();
        // 10 steps, 9 turns of 10 degrees, 10 steps
        assert_eq!(poses.len(), 1 + 10 + 9 + 10);
        assert!((poses[10].translation - Vector3::new(3.0, 1.0, 1.0)).norm() < 1e-12);
        assert!((poses[19].yaw() - PI / 2.0).abs() < 1e-12);
        assert!(matches!(
            ground_truth_poses(&w, &[Waypoint::new(0.0, 1.0, 0)], &cfg),
            Err(SimError::WaypointInWall { index: 0 })
        ));
    }

    #[test]
    fn waypoint_parsing() {
        let w = parse_waypoints("# path\n1 2\n3.5 4 1  # upstairs\n\n").unwrap();
        assert_eq!(w, vec![Waypoint::new(1.0, 2.0, 0), Waypoint::new(3.5, 4.0, 1)]);
        assert!(matches!(parse_waypoints("1"), Err(SimError::BadWaypoint { line: 1 })));
    }
}
