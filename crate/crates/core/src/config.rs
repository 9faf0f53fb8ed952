//! Run configuration and its flat `key = value` text form.
//!
//! Every field is addressable by its dotted path, e.g.
//! `scene.min_side = 1.5` or `loop_closure.icp.max_iterations = 20`.
//! Values are JSON literals; anything that does not parse as one is taken
//! as a bare string, so `odometry = icp` works without quotes.

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::freespace::FreespaceConfig;
use crate::graph::OptimizerConfig;
use crate::loop_closure::{IcpConfig, LoopConfig};
use crate::perception::{AssociationConfig, PrefilterConfig, SegmentationConfig};
use crate::scene::SceneConfig;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: `{key}` is a section, not a value")]
    NotAValue { line: usize, key: String },
    #[error("invalid value: {0}")]
    Invalid(String),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OdometrySource {
    #[default]
    Dataset,
    Icp,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KeyframePolicy {
    pub translation: f64,
    pub rotation_deg: f64,
}

impl Default for KeyframePolicy {
    fn default() -> Self {
        Self {
            translation: 0.5,
            rotation_deg: 15.0,
        }
    }
}

/// Per-step odometry noise assumed when weighting odometry and loop factors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OdometryNoise {
    pub sigma_t: f64,
    pub sigma_rot_deg: f64,
}

impl Default for OdometryNoise {
    fn default() -> Self {
        Self {
            sigma_t: 0.01,
            sigma_rot_deg: 0.2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub odometry: OdometrySource,
    pub single_thread: bool,
    pub optimize_every: usize,
    /// Diagonal information of the prior that fixes the first keyframe.
    pub anchor_information: f64,
    /// Voxel size of the exported map.
    pub map_voxel: f64,
    /// Sampling step of the ground-truth surfaces for the map metric.
    pub map_reference_spacing: f64,
    pub keyframe: KeyframePolicy,
    pub odometry_noise: OdometryNoise,
    pub icp_odometry: IcpConfig,
    pub prefilter: PrefilterConfig,
    pub segmentation: SegmentationConfig,
    pub association: AssociationConfig,
    pub freespace: FreespaceConfig,
    pub scene: SceneConfig,
    pub loop_closure: LoopConfig,
    pub optimizer: OptimizerConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            odometry: OdometrySource::Dataset,
            single_thread: false,
            optimize_every: 1,
            anchor_information: 1e6,
            map_voxel: 0.05,
            map_reference_spacing: 0.05,
            keyframe: KeyframePolicy::default(),
            odometry_noise: OdometryNoise::default(),
            icp_odometry: IcpConfig {
                min_overlap: 0.5,
                ..IcpConfig::default()
            },
            prefilter: PrefilterConfig::default(),
            segmentation: SegmentationConfig::default(),
            association: AssociationConfig::default(),
            freespace: FreespaceConfig::default(),
            scene: SceneConfig::default(),
            loop_closure: LoopConfig::default(),
            optimizer: OptimizerConfig::default(),
        }
    }
}

impl PipelineConfig {
    /// Applies `key = value` lines on top of the defaults.
    pub fn from_config_str(text: &str) -> Result<Self, ConfigError> {
        let mut tree = serde_json::to_value(Self::default()).expect("config serializes");
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or(ConfigError::Syntax { line: i + 1 })?;
            let (key, value) = (key.trim(), value.trim());
            if key.is_empty() || value.is_empty() {
                return Err(ConfigError::Syntax { line: i + 1 });
            }
            let slot = lookup(&mut tree, key).ok_or_else(|| ConfigError::UnknownKey {
                line: i + 1,
                key: key.to_string(),
            })?;
            if slot.is_object() {
                return Err(ConfigError::NotAValue {
                    line: i + 1,
                    key: key.to_string(),
                });
            }
            *slot = serde_json::from_str(value).unwrap_or_else(|_| Value::String(value.to_string()));
        }
        let cfg: Self = serde_json::from_value(tree).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Every leaf as a `key = value` line, sorted by key.
    pub fn to_config_string(&self) -> String {
        let tree = serde_json::to_value(self).expect("config serializes");
        let mut out = String::new();
        flatten("", &tree, &mut out);
        out
    }

    /// Rejects non-positive thresholds.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let positive = [
            ("keyframe.translation", self.keyframe.translation),
            ("keyframe.rotation_deg", self.keyframe.rotation_deg),
            ("odometry_noise.sigma_t", self.odometry_noise.sigma_t),
            ("odometry_noise.sigma_rot_deg", self.odometry_noise.sigma_rot_deg),
            ("anchor_information", self.anchor_information),
            ("map_voxel", self.map_voxel),
            ("map_reference_spacing", self.map_reference_spacing),
            ("prefilter.range_max", self.prefilter.range_max),
            ("segmentation.ransac_threshold", self.segmentation.ransac_threshold),
            ("association.plane_match_tol", self.association.plane_match_tol),
            ("association.info_per_inlier", self.association.info_per_inlier),
            ("association.info_cap", self.association.info_cap),
            ("freespace.resolution", self.freespace.resolution),
            ("freespace.max_ray_length", self.freespace.max_ray_length),
            ("scene.min_side", self.scene.min_side),
            ("scene.max_side", self.scene.max_side),
            ("scene.room_match_tol", self.scene.room_match_tol),
            ("scene.pair_information", self.scene.pair_information),
            ("scene.floor_information", self.scene.floor_information),
            ("scene.floor_height_tol", self.scene.floor_height_tol),
            ("loop_closure.search_radius", self.loop_closure.search_radius),
            ("loop_closure.fitness_accept", self.loop_closure.fitness_accept),
            (
                "loop_closure.icp.max_correspondence",
                self.loop_closure.icp.max_correspondence,
            ),
            ("optimizer.initial_lambda", self.optimizer.initial_lambda),
            ("optimizer.huber_delta", self.optimizer.huber_delta),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(ConfigError::Invalid(format!("{name} must be positive, got {v}")));
            }
        }
        let counts = [
            ("optimize_every", self.optimize_every),
            ("segmentation.min_inliers", self.segmentation.min_inliers),
            ("freespace.stride", self.freespace.stride),
            ("freespace.window", self.freespace.window),
            ("loop_closure.max_candidates", self.loop_closure.max_candidates),
            (
                "loop_closure.icp.normal_neighbors",
                self.loop_closure.icp.normal_neighbors,
            ),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(ConfigError::Invalid(format!("{name} must be at least 1")));
            }
        }
        if self.scene.min_side >= self.scene.max_side {
            return Err(ConfigError::Invalid(
                "scene.min_side must be below scene.max_side".into(),
            ));
        }
        Ok(())
    }
}

fn lookup<'a>(tree: &'a mut Value, dotted: &str) -> Option<&'a mut Value> {
    let mut node = tree;
    for part in dotted.split('.') {
        node = node.as_object_mut()?.get_mut(part)?;
    }
    Some(node)
}

fn flatten(prefix: &str, v: &Value, out: &mut String) {
    match v {
        Value::Object(m) => flatten_map(prefix, m, out),
        _ => out.push_str(&format!("{prefix} = {v}\n")),
    }
}

fn flatten_map(prefix: &str, m: &Map<String, Value>, out: &mut String) {
    for (k, v) in m {
        let key = if prefix.is_empty() {
            k.clone()
        } else {
            format!("{prefix}.{k}")
        };
        flatten(&key, v, out);
    }
}
