//! End-to-end run over a dataset: front-end, scene layers, loop closure and
//! joint optimization, followed by evaluation and export.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::{Duration, Instant};

use nalgebra::{Matrix6, Vector3};
use serde::Serialize;
use thiserror::Error;

use crate::config::{ConfigError, OdometrySource, PipelineConfig};
use crate::eval::{compute_ate, compute_map_rmse, EvalError};
use crate::freespace::{
    build_free_space_graph, compute_esdf, rasterize_map, split_clusters, Cluster, FreespaceError, RayBundle,
};
use crate::geometry::{Axis, PlaneCategory, Pose};
use crate::graph::io::GraphDoc;
use crate::graph::{
    optimize, BetweenFactor, Factor, FactorGraph, FactorKind, GraphError, KeyframeVar, PoseAnchorFactor, RoomKind,
    Variable, VariableId, VariableKind,
};
use crate::loop_closure::{add_loop_factor, find_candidates, scan_match, verify_candidates, LoopCandidate};
use crate::perception::{
    associate_and_map_plane, prefilter, segment_planes, write_xyz, PerceptionError, PlaneObservations, PointCloud,
    PrefilterConfig,
};
use crate::scene::{
    associate_room, detect_floor_change, detect_rooms, mapped_planes, update_floor, FloorRegistry, SceneError,
};
use crate::simulator::{read_dataset, Dataset, SimError};
use crate::trajectory::{format_tum, Stamped};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    BadDataset(#[from] SimError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Perception(#[from] PerceptionError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Wall-clock seconds per stage; kept out of the report so that the report
/// stays byte-identical across runs.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct StageTiming {
    pub prefilter: f64,
    pub odometry: f64,
    pub segmentation: f64,
    pub freespace_and_loop_search: f64,
    pub rooms: f64,
    pub floors: f64,
    pub optimization: f64,
    pub evaluation: f64,
    pub total: f64,
}

fn secs(d: Duration) -> f64 {
    d.as_secs_f64()
}

#[derive(Clone, Debug)]
pub struct KeyframeRecord {
    pub id: VariableId,
    pub timestamp: f64,
    /// Odometry pose at this keyframe, before any optimization.
    pub odometry: Pose,
    pub ground_truth: Pose,
}

pub struct RunState {
    pub config: PipelineConfig,
    pub graph: FactorGraph,
    pub observations: PlaneObservations,
    pub floors: FloorRegistry,
    pub keyframes: Vec<KeyframeRecord>,
    /// Pre-filtered sensor-frame cloud of every keyframe.
    pub clouds: BTreeMap<VariableId, PointCloud>,
    /// Latest free-space clusters per floor.
    pub clusters: BTreeMap<u32, Vec<Cluster>>,
    pub optimizer_iterations: usize,
    pub timing: StageTiming,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunCounts {
    pub keyframes: usize,
    pub planes: usize,
    pub rooms_finite: usize,
    pub rooms_infinite: usize,
    pub floors: usize,
    pub loop_factors: usize,
    pub factors: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunReport {
    pub ate_rmse: Option<f64>,
    pub odometry_ate_rmse: Option<f64>,
    pub map_rmse: Option<f64>,
    pub counts: RunCounts,
    pub optimizer_iterations: usize,
}

/// Odometry information for `steps` chained frames of independent noise.
pub fn odometry_information(cfg: &PipelineConfig, steps: usize) -> Matrix6<f64> {
    let n = steps.max(1) as f64;
    let rot = 1.0 / (n * cfg.odometry_noise.sigma_rot_deg.to_radians().powi(2));
    let trans = 1.0 / (n * cfg.odometry_noise.sigma_t.powi(2));
    Matrix6::from_diagonal(&nalgebra::Vector6::new(rot, rot, rot, trans, trans, trans))
}

pub fn run_dataset_dir(dir: &Path, cfg: &PipelineConfig) -> Result<(Dataset, RunState), PipelineError> {
    let dataset = read_dataset(dir)?;
    let state = run_slam(&dataset, cfg)?;
    Ok((dataset, state))
}

/// Processes every frame in order and finishes with a full optimization.
pub fn run_slam(dataset: &Dataset, cfg: &PipelineConfig) -> Result<RunState, PipelineError> {
    cfg.validate()?;
    let started = Instant::now();
    let parallel = !cfg.single_thread;
    let mut opt_cfg = cfg.optimizer.clone();
    opt_cfg.parallel = parallel;
    let mut st = RunState {
        config: cfg.clone(),
        graph: FactorGraph::new(),
        observations: PlaneObservations::new(),
        floors: FloorRegistry::default(),
        keyframes: Vec::new(),
        clouds: BTreeMap::new(),
        clusters: BTreeMap::new(),
        optimizer_iterations: 0,
        timing: StageTiming::default(),
    };

    let mut prev: Option<(PointCloud, Pose)> = None;
    let mut steps_since_keyframe = 0usize;
    let mut since_optimization = 0usize;
    for (i, frame) in dataset.frames.iter().enumerate() {
        let t = Instant::now();
        let cloud = prefilter(&frame.cloud, &cfg.prefilter);
        st.timing.prefilter += secs(t.elapsed());

        let t = Instant::now();
        let odom = match (cfg.odometry, &prev) {
            (OdometrySource::Dataset, _) | (_, None) => frame.odometry,
            (OdometrySource::Icp, Some((prev_cloud, prev_odom))) => {
                // the dataset increment seeds the match and is the fallback
                let guess = dataset.frames[i - 1].odometry.between(&frame.odometry);
                let inc = match scan_match(&cloud, prev_cloud, &guess, &cfg.icp_odometry) {
                    Ok((p, _)) => p,
                    Err(_) => guess,
                };
                prev_odom.compose(&inc)
            }
        };
        st.timing.odometry += secs(t.elapsed());
        if i > 0 {
            steps_since_keyframe += 1;
        }

        let last = st.keyframes.last().cloned();
        let delta = last.as_ref().map(|l| l.odometry.between(&odom));
        let is_keyframe = match &delta {
            None => true,
            Some(d) => {
                d.translation.norm() >= cfg.keyframe.translation
                    || d.rotation_angle() >= cfg.keyframe.rotation_deg.to_radians()
            }
        };
        if is_keyframe {
            add_keyframe(
                &mut st,
                frame.timestamp,
                odom,
                frame.ground_truth,
                &cloud,
                delta,
                steps_since_keyframe,
                parallel,
            )?;
            steps_since_keyframe = 0;
            since_optimization += 1;
            if since_optimization >= cfg.optimize_every {
                let t = Instant::now();
                st.optimizer_iterations += optimize(&mut st.graph, &opt_cfg)?.iterations;
                st.timing.optimization += secs(t.elapsed());
                since_optimization = 0;
            }
        }
        prev = Some((cloud, odom));
    }
    if st.graph.num_factors() > 0 {
        let t = Instant::now();
        st.optimizer_iterations += optimize(&mut st.graph, &opt_cfg)?.iterations;
        st.timing.optimization += secs(t.elapsed());
    }
    st.timing.total = secs(started.elapsed());
    Ok(st)
}

#[allow(clippy::too_many_arguments)]
fn add_keyframe(
    st: &mut RunState,
    timestamp: f64,
    odom: Pose,
    ground_truth: Pose,
    cloud: &PointCloud,
    delta: Option<Pose>,
    steps: usize,
    parallel: bool,
) -> Result<(), PipelineError> {
    let cfg = st.config.clone();
    let t = Instant::now();
    let last = st.keyframes.last().map(|k| k.id);
    let estimate = match (last, delta) {
        (Some(l), Some(d)) => st.graph.keyframe(l)?.pose.compose(&d),
        _ => odom,
    };
    let floor = detect_floor_change(estimate.translation.z, &mut st.floors, &cfg.scene);
    let id = st.graph.add_variable(Variable::Keyframe(KeyframeVar {
        pose: estimate,
        timestamp,
        floor,
    }));
    match (last, delta) {
        (Some(l), Some(d)) => {
            st.graph.add_factor(Factor::Odometry(BetweenFactor {
                from: l,
                to: id,
                measurement: d,
                information: odometry_information(&cfg, steps),
            }))?;
        }
        _ => {
            st.graph.add_factor(Factor::PoseAnchor(PoseAnchorFactor {
                keyframe: id,
                prior: estimate,
                information: Matrix6::identity() * cfg.anchor_information,
            }))?;
        }
    }
    st.keyframes.push(KeyframeRecord {
        id,
        timestamp,
        odometry: odom,
        ground_truth,
    });
    st.clouds.insert(id, cloud.clone());
    st.timing.odometry += secs(t.elapsed());

    let t = Instant::now();
    let mut seg_cfg = cfg.segmentation.clone();
    seg_cfg.seed = cfg.segmentation.seed ^ cfg.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ id.index;
    for plane in segment_planes(cloud, &seg_cfg) {
        let pid = associate_and_map_plane(&mut st.graph, id, &plane, &cfg.association)?;
        let pts: Vec<Vector3<f64>> = plane.inliers.iter().map(|&k| cloud.points[k]).collect();
        st.observations.record(pid, id, &pts, cfg.association.max_track_points);
    }
    st.timing.segmentation += secs(t.elapsed());

    // free space and loop verification both read the same graph state
    let t = Instant::now();
    let graph = &st.graph;
    let freespace_job = || free_space_clusters(graph, &st.clouds, &st.keyframes, &st.floors, floor, &cfg);
    let loop_job = || {
        let candidates = find_candidates(graph, id, &cfg.loop_closure);
        verify_candidates(graph, &st.clouds, id, &candidates, &cfg.loop_closure, parallel)
    };
    let (clusters, found): (Result<Vec<Cluster>, FreespaceError>, Option<LoopCandidate>) = if parallel {
        rayon::join(freespace_job, loop_job)
    } else {
        (freespace_job(), loop_job())
    };
    st.timing.freespace_and_loop_search += secs(t.elapsed());

    let t = Instant::now();
    let clusters = clusters.unwrap_or_default();
    let planes = mapped_planes(&st.graph, &st.observations, floor, cfg.scene.max_plane_points);
    for cand in detect_rooms(&clusters, &planes, id.index, &cfg.scene) {
        // an earlier candidate of this frame may have merged one of its walls away
        if cand.planes().iter().any(|p| st.graph.plane(*p).is_err()) {
            continue;
        }
        associate_room(&mut st.graph, &mut st.observations, &cand, &cfg.scene)?;
    }
    st.clusters.insert(floor, clusters);
    st.timing.rooms += secs(t.elapsed());

    let t = Instant::now();
    match update_floor(&mut st.graph, floor, &cfg.scene) {
        Ok(_) | Err(SceneError::InsufficientWalls(_)) => {}
        Err(e) => return Err(e.into()),
    }
    st.timing.floors += secs(t.elapsed());

    if let Some(found) = found {
        add_loop_factor(&mut st.graph, &found, &odometry_information(&cfg, 1));
    }
    Ok(())
}

/// Clusters of the local window: the latest `window` keyframes on `floor`.
fn free_space_clusters(
    graph: &FactorGraph,
    clouds: &BTreeMap<VariableId, PointCloud>,
    keyframes: &[KeyframeRecord],
    floors: &FloorRegistry,
    floor: u32,
    cfg: &PipelineConfig,
) -> Result<Vec<Cluster>, FreespaceError> {
    let mut window: Vec<(Vector3<f64>, Vec<Vector3<f64>>)> = Vec::new();
    for k in keyframes.iter().rev() {
        if window.len() >= cfg.freespace.window {
            break;
        }
        let Ok(kf) = graph.keyframe(k.id) else { continue };
        if kf.floor != floor {
            continue;
        }
        let Some(cloud) = clouds.get(&k.id) else { continue };
        window.push((kf.pose.translation, cloud.transformed(&kf.pose).points));
    }
    let bundles: Vec<RayBundle<'_>> = window
        .iter()
        .map(|(o, pts)| RayBundle {
            origin: *o,
            points: pts,
        })
        .collect();
    let ground_z = floors.reference_z[floor as usize] - cfg.freespace.sensor_height;
    let grid = rasterize_map(&bundles, ground_z, &cfg.freespace)?;
    let esdf = compute_esdf(&grid);
    let fsg = build_free_space_graph(&esdf, &cfg.freespace);
    Ok(split_clusters(&fsg, &cfg.freespace))
}

impl RunState {
    pub fn estimated_trajectory(&self) -> Vec<Stamped> {
        self.keyframes
            .iter()
            .map(|k| Stamped {
                timestamp: k.timestamp,
                pose: self.graph.keyframe(k.id).expect("recorded keyframe").pose,
            })
            .collect()
    }

    pub fn odometry_trajectory(&self) -> Vec<Stamped> {
        self.keyframes
            .iter()
            .map(|k| Stamped {
                timestamp: k.timestamp,
                pose: k.odometry,
            })
            .collect()
    }

    /// All keyframe clouds at the optimized poses, voxel-downsampled.
    pub fn map_cloud(&self) -> PointCloud {
        let mut all = PointCloud::default();
        for k in &self.keyframes {
            let pose = self.graph.keyframe(k.id).expect("recorded keyframe").pose;
            all.extend(&self.clouds[&k.id].transformed(&pose));
        }
        prefilter(
            &all,
            &PrefilterConfig {
                range_min: 0.0,
                range_max: f64::INFINITY,
                voxel: self.config.map_voxel,
            },
        )
    }

    pub fn counts(&self) -> RunCounts {
        let rooms: Vec<RoomKind> = self
            .graph
            .ids_of_kind(VariableKind::Room)
            .into_iter()
            .map(|id| self.graph.room(id).expect("listed room").kind)
            .collect();
        RunCounts {
            keyframes: self.graph.count_variables(VariableKind::Keyframe),
            planes: self.graph.count_variables(VariableKind::Plane),
            rooms_finite: rooms.iter().filter(|k| **k == RoomKind::Finite).count(),
            rooms_infinite: rooms.iter().filter(|k| **k == RoomKind::Infinite).count(),
            floors: self.graph.count_variables(VariableKind::Floor),
            loop_factors: self.graph.count_factors(FactorKind::Loop),
            factors: self.graph.num_factors(),
        }
    }

    /// Metrics against the dataset's ground truth.
    pub fn report(&mut self, dataset: &Dataset) -> RunReport {
        let t = Instant::now();
        let reference: Vec<Stamped> = dataset
            .frames
            .iter()
            .map(|f| Stamped {
                timestamp: f.timestamp,
                pose: f.ground_truth,
            })
            .collect();
        let ate_rmse = compute_ate(&self.estimated_trajectory(), &reference).ok();
        let odometry_ate_rmse = compute_ate(&self.odometry_trajectory(), &reference).ok();
        let truth = dataset.world.sample_surfaces(self.config.map_reference_spacing);
        let map_rmse = compute_map_rmse(&self.map_cloud(), &truth).ok();
        self.timing.evaluation += secs(t.elapsed());
        RunReport {
            ate_rmse,
            odometry_ate_rmse,
            map_rmse,
            counts: self.counts(),
            optimizer_iterations: self.optimizer_iterations,
        }
    }

    pub fn scene_document(&self) -> SceneDocument {
        SceneDocument::from_state(self)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct KeyframeDoc {
    pub id: String,
    pub timestamp: f64,
    pub floor: u32,
    pub translation: [f64; 3],
    /// `[w, x, y, z]`
    pub rotation: [f64; 4],
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PlaneDoc {
    pub id: String,
    pub category: PlaneCategory,
    pub floor: u32,
    pub normal: [f64; 3],
    pub d: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RoomDoc {
    pub id: String,
    pub kind: RoomKind,
    pub axis: Option<Axis>,
    pub floor: u32,
    pub center: [f64; 2],
    pub planes: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FloorDoc {
    pub id: String,
    pub floor: u32,
    pub center: [f64; 2],
    pub rooms: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ClusterDoc {
    pub floor: u32,
    pub centroid: [f64; 2],
    pub vertices: Vec<[f64; 2]>,
}

/// The exported situational graph: one array per layer plus the full factor graph.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SceneDocument {
    pub keyframes: Vec<KeyframeDoc>,
    pub planes: Vec<PlaneDoc>,
    pub rooms: Vec<RoomDoc>,
    pub floors: Vec<FloorDoc>,
    pub clusters: Vec<ClusterDoc>,
    pub graph: GraphDoc,
}

impl SceneDocument {
    pub fn from_state(st: &RunState) -> Self {
        let g = &st.graph;
        let mut keyframes = Vec::new();
        let mut planes = Vec::new();
        let mut rooms = Vec::new();
        let mut floors = Vec::new();
        for (id, v) in g.variables() {
            match v {
                Variable::Keyframe(k) => {
                    let q = k.pose.rotation.quaternion();
                    keyframes.push(KeyframeDoc {
                        id: id.to_string(),
                        timestamp: k.timestamp,
                        floor: k.floor,
                        translation: k.pose.translation.into(),
                        rotation: [q.w, q.i, q.j, q.k],
                    });
                }
                Variable::Plane(p) => planes.push(PlaneDoc {
                    id: id.to_string(),
                    category: p.category,
                    floor: p.floor,
                    normal: p.coeffs.normal.into(),
                    d: p.coeffs.d,
                }),
                Variable::Room(r) => rooms.push(RoomDoc {
                    id: id.to_string(),
                    kind: r.kind,
                    axis: r.axis,
                    floor: r.floor,
                    center: r.position.into(),
                    planes: r.member_planes().iter().map(|p| p.to_string()).collect(),
                }),
                Variable::Floor(f) => {
                    let linked = g
                        .factors_of(*id)
                        .into_iter()
                        .filter_map(|fid| match g.factor(fid) {
                            Some(Factor::FloorRoom(fr)) => Some(fr.room.to_string()),
                            _ => None,
                        })
                        .collect();
                    floors.push(FloorDoc {
                        id: id.to_string(),
                        floor: f.floor,
                        center: f.position.into(),
                        rooms: linked,
                    });
                }
            }
        }
        let clusters = st
            .clusters
            .iter()
            .flat_map(|(floor, cs)| {
                cs.iter().map(move |c| ClusterDoc {
                    floor: *floor,
                    centroid: c.centroid.into(),
                    vertices: c.positions.iter().map(|p| (*p).into()).collect(),
                })
            })
            .collect();
        Self {
            keyframes,
            planes,
            rooms,
            floors,
            clusters,
            graph: GraphDoc::from_graph(g),
        }
    }
}

pub const OUTPUT_FILES: [&str; 4] = ["est.tum", "map.xyz", "sgraph.json", "report.json"];

/// Writes the four run artifacts plus `timing.json`.
pub fn export_outputs(st: &RunState, report: &RunReport, out: &Path) -> Result<(), PipelineError> {
    fs::create_dir_all(out)?;
    fs::write(out.join("est.tum"), format_tum(&st.estimated_trajectory()))?;
    write_xyz(&out.join("map.xyz"), &st.map_cloud())?;
    let doc = serde_json::to_string_pretty(&st.scene_document()).expect("scene document serializes");
    fs::write(out.join("sgraph.json"), doc + "\n")?;
    let rep = serde_json::to_string_pretty(report).expect("report serializes");
    fs::write(out.join("report.json"), rep + "\n")?;
    let timing = serde_json::to_string_pretty(&st.timing).expect("timing serializes");
    fs::write(out.join("timing.json"), timing + "\n")?;
    Ok(())
}
