use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use super::SimError;
use crate::perception::PointCloud;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Rect {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl Rect {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Self {
        Self {
            x_min,
            y_min,
            x_max,
            y_max,
        }
    }

    pub fn center(&self) -> Vector2<f64> {
        Vector2::new(0.5 * (self.x_min + self.x_max), 0.5 * (self.y_min + self.y_max))
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x_min && x <= self.x_max && y >= self.y_min && y <= self.y_max
    }

    fn is_valid(&self) -> bool {
        [self.x_min, self.y_min, self.x_max, self.y_max]
            .iter()
            .all(|v| v.is_finite())
            && self.x_max > self.x_min
            && self.y_max > self.y_min
    }

    /// Edges as `(axis of the edge direction, fixed coordinate, span)`.
    fn edges(&self) -> [(usize, f64, f64, f64); 4] {
        [
            (0, self.y_min, self.x_min, self.x_max),
            (0, self.y_max, self.x_min, self.x_max),
            (1, self.x_min, self.y_min, self.y_max),
            (1, self.x_max, self.y_min, self.y_max),
        ]
    }
}

/// Full-height opening in a wall.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Door {
    pub center: [f64; 2],
    pub width: f64,
}

impl Door {
    pub fn new(x: f64, y: f64, width: f64) -> Self {
        Self { center: [x, y], width }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FloorPlan {
    pub id: u32,
    pub z_base: f64,
    pub rooms: Vec<Rect>,
    #[serde(default)]
    pub corridors: Vec<Rect>,
    #[serde(default)]
    pub doors: Vec<Door>,
}

impl FloorPlan {
    pub fn areas(&self) -> impl Iterator<Item = &Rect> {
        self.rooms.iter().chain(self.corridors.iter())
    }
}

fn default_wall_height() -> f64 {
    2.5
}

fn default_wall_thickness() -> f64 {
    0.1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct World {
    pub floors: Vec<FloorPlan>,
    #[serde(default = "default_wall_height")]
    pub wall_height: f64,
    #[serde(default = "default_wall_thickness")]
    pub wall_thickness: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Aabb {
    pub min: Vector3<f64>,
    pub max: Vector3<f64>,
}

impl Aabb {
    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        (0..3).all(|i| p[i] > self.min[i] && p[i] < self.max[i])
    }

    /// Entry distance of the ray `o + t d`, `t > 0`, by the slab method.
    pub fn ray_entry(&self, o: &Vector3<f64>, d: &Vector3<f64>) -> Option<f64> {
        let mut t0 = f64::NEG_INFINITY;
        let mut t1 = f64::INFINITY;
        for i in 0..3 {
            if d[i].abs() < 1e-15 {
                if o[i] < self.min[i] || o[i] > self.max[i] {
                    return None;
                }
                continue;
            }
            let a = (self.min[i] - o[i]) / d[i];
            let b = (self.max[i] - o[i]) / d[i];
            t0 = t0.max(a.min(b));
            t1 = t1.min(a.max(b));
        }
        (t0 <= t1 && t0 > 0.0).then_some(t0)
    }
}

impl World {
    pub fn single_floor(rooms: Vec<Rect>, doors: Vec<Door>) -> Self {
        Self {
            floors: vec![FloorPlan {
                id: 0,
                z_base: 0.0,
                rooms,
                corridors: Vec::new(),
                doors,
            }],
            wall_height: default_wall_height(),
            wall_thickness: default_wall_thickness(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self, SimError> {
        let w: World = serde_json::from_str(text)?;
        w.validate()?;
        Ok(w)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("world serializes")
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::InvalidWorld(m));
        if !(self.wall_height > 0.0 && self.wall_thickness > 0.0) {
            return bad("wall height and thickness must be positive".into());
        }
        if self.floors.is_empty() {
            return bad("no floors".into());
        }
        for (i, f) in self.floors.iter().enumerate() {
            if self.floors[..i].iter().any(|g| g.id == f.id) {
                return bad(format!("duplicate floor id {}", f.id));
            }
            if self.floors[..i]
                .iter()
                .any(|g| (g.z_base - f.z_base).abs() < self.wall_height)
            {
                return bad(format!("floor {} overlaps another floor", f.id));
            }
            if f.rooms.is_empty() && f.corridors.is_empty() {
                return bad(format!("floor {} has no rooms", f.id));
            }
            if let Some(r) = f.areas().find(|r| !r.is_valid()) {
                return bad(format!("degenerate rectangle {r:?}"));
            }
            for d in &f.doors {
                if d.width.is_nan() || d.width <= 0.0 || !f.areas().any(|r| door_on_rect(d, r)) {
                    return bad(format!("door at {:?} is not on a wall", d.center));
                }
            }
        }
        Ok(())
    }

    pub fn floor(&self, id: u32) -> Option<&FloorPlan> {
        self.floors.iter().find(|f| f.id == id)
    }

    /// The floor whose `[z_base, z_base + wall_height]` band contains `z`.
    pub fn floor_containing(&self, z: f64) -> Option<&FloorPlan> {
        self.floors
            .iter()
            .find(|f| z > f.z_base && z < f.z_base + self.wall_height)
    }

    /// Inside some room or corridor and clear of every wall box.
    pub fn is_free(&self, plan: &FloorPlan, x: f64, y: f64) -> bool {
        let p = Vector3::new(x, y, plan.z_base + 0.5 * self.wall_height);
        plan.areas().any(|r| r.contains(x, y)) && !self.wall_boxes(plan).iter().any(|b| b.contains(&p))
    }

    /// Rectangle edges as slabs of `wall_thickness` centered on the edge,
    /// with door openings cut out.
    pub fn wall_boxes(&self, plan: &FloorPlan) -> Vec<Aabb> {
        let h = 0.5 * self.wall_thickness;
        let (z0, z1) = (plan.z_base, plan.z_base + self.wall_height);
        let mut out = Vec::new();
        for r in plan.areas() {
            for (axis, fixed, lo, hi) in r.edges() {
                let mut spans = vec![(lo - h, hi + h)];
                for d in &plan.doors {
                    let (along, across) = if axis == 0 {
                        (d.center[0], d.center[1])
                    } else {
                        (d.center[1], d.center[0])
                    };
                    if (across - fixed).abs() > 1e-9 || along < lo || along > hi {
                        continue;
                    }
                    let (c0, c1) = (along - 0.5 * d.width, along + 0.5 * d.width);
                    spans = spans
                        .into_iter()
                        .flat_map(|(a, b)| {
                            let mut parts = Vec::new();
                            if c0 > a {
                                parts.push((a, c0.min(b)));
                            }
                            if c1 < b {
                                parts.push((c1.max(a), b));
                            }
                            parts
                        })
                        .filter(|(a, b)| b > a)
                        .collect();
                }
                for (a, b) in spans {
                    out.push(if axis == 0 {
                        Aabb {
                            min: Vector3::new(a, fixed - h, z0),
                            max: Vector3::new(b, fixed + h, z1),
                        }
                    } else {
                        Aabb {
                            min: Vector3::new(fixed - h, a, z0),
                            max: Vector3::new(fixed + h, b, z1),
                        }
                    });
                }
            }
        }
        out
    }

    /// Analytic room centers as `(floor id, center)`; corridors excluded.
    pub fn room_centers(&self) -> Vec<(u32, Vector2<f64>)> {
        self.floors
            .iter()
            .flat_map(|f| f.rooms.iter().map(move |r| (f.id, r.center())))
            .collect()
    }

    /// Dense samples of every wall face, floor and ceiling at `spacing`.
    pub fn sample_surfaces(&self, spacing: f64) -> PointCloud {
        let mut pts = Vec::new();
        let h = 0.5 * self.wall_thickness;
        for plan in &self.floors {
            for b in self.wall_boxes(plan) {
                for axis in 0..3 {
                    let (u, v) = ((axis + 1) % 3, (axis + 2) % 3);
                    for side in [b.min[axis], b.max[axis]] {
                        for su in grid(b.min[u], b.max[u], spacing) {
                            for sv in grid(b.min[v], b.max[v], spacing) {
                                let mut p = Vector3::zeros();
                                p[axis] = side;
                                p[u] = su;
                                p[v] = sv;
                                pts.push(p);
                            }
                        }
                    }
                }
            }
            for r in plan.areas() {
                for z in [plan.z_base, plan.z_base + self.wall_height] {
                    for x in grid(r.x_min - h, r.x_max + h, spacing) {
                        for y in grid(r.y_min - h, r.y_max + h, spacing) {
                            pts.push(Vector3::new(x, y, z));
                        }
                    }
                }
            }
        }
        PointCloud::new(pts)
    }
}

fn door_on_rect(d: &Door, r: &Rect) -> bool {
    r.edges().iter().any(|&(axis, fixed, lo, hi)| {
        let (along, across) = if axis == 0 {
            (d.center[0], d.center[1])
        } else {
            (d.center[1], d.center[0])
        };
        (across - fixed).abs() <= 1e-9 && along - 0.5 * d.width >= lo && along + 0.5 * d.width <= hi
    })
}

/// Inclusive evenly spaced samples with spacing at most `step`.
fn grid(a: f64, b: f64, step: f64) -> impl Iterator<Item = f64> {
    let n = ((b - a) / step).ceil().max(1.0) as usize;
    (0..=n).map(move |i| a + (b - a) * i as f64 / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn door_splits_wall() {
        let w = World::single_floor(
            vec![Rect::new(0.0, 0.0, 4.0, 4.0), Rect::new(4.0, 0.0, 8.0, 4.0)],
            vec![Door::new(4.0, 2.0, 1.0)],
        );
        w.validate().unwrap();
        let boxes = w.wall_boxes(&w.floors[0]);
        // each room: 3 full edges and the shared edge in two pieces
        assert_eq!(boxes.len(), 10);
        let shared: Vec<_> = boxes
            .iter()
            .filter(|b| (b.min.x - 3.95).abs() < 1e-12 && (b.max.x - 4.05).abs() < 1e-12)
            .collect();
        assert_eq!(shared.len(), 4);
        assert!(shared.iter().all(|b| b.max.y <= 1.5 || b.min.y >= 2.5));
        assert!(w.is_free(&w.floors[0], 4.0, 2.0));
        assert!(!w.is_free(&w.floors[0], 4.0, 1.0));
    }

    #[test]
    fn validation_rejects_bad_worlds() {
        let mut w = World::single_floor(vec![Rect::new(0.0, 0.0, 4.0, 4.0)], vec![Door::new(2.0, 2.0, 1.0)]);
        assert!(matches!(w.validate(), Err(SimError::InvalidWorld(_))));
        w.floors[0].doors.clear();
        w.floors[0].rooms.push(Rect::new(1.0, 1.0, 1.0, 2.0));
        assert!(matches!(w.validate(), Err(SimError::InvalidWorld(_))));
    }

    #[test]
    fn json_round_trip() {
        let w = World::single_floor(vec![Rect::new(0.0, 0.0, 4.0, 4.0)], Vec::new());
        assert_eq!(World::from_json(&w.to_json()).unwrap(), w);
        let minimal = r#"{"floors":[{"id":0,"z_base":0,"rooms":[{"x_min":0,"y_min":0,"x_max":3,"y_max":3}]}]}"#;
        assert_eq!(World::from_json(minimal).unwrap().wall_height, 2.5);
    }

    #[test]
    fn slab_entry_distance() {
        let b = Aabb {
            min: Vector3::new(1.0, -1.0, -1.0),
            max: Vector3::new(2.0, 1.0, 1.0),
        };
        assert_eq!(b.ray_entry(&Vector3::zeros(), &Vector3::x()), Some(1.0));
        assert_eq!(b.ray_entry(&Vector3::zeros(), &-Vector3::x()), None);
        assert_eq!(b.ray_entry(&Vector3::new(0.0, 2.0, 0.0), &Vector3::x()), None);
    }
}
