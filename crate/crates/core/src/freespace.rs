//! Free-space reasoning on a 2D slice of the map.
//!
//! Scans are rasterized into an occupancy grid, an exact Euclidean distance
//! transform gives every cell its clearance, and a lattice graph over the
//! free cells is cut at low-clearance vertices (doorways) into per-room
//! clusters.

use std::collections::VecDeque;

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FreespaceError {
    #[error("nothing to rasterize")]
    EmptyInput,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FreespaceConfig {
    pub resolution: f64,
    /// Height band above the ground, in meters, whose points mark cells occupied.
    pub z_low: f64,
    pub z_high: f64,
    /// Sensor mounting height used to recover the ground level of a floor.
    pub sensor_height: f64,
    /// Rays longer than this do not mark free space.
    pub max_ray_length: f64,
    pub stride: usize,
    pub min_clearance: f64,
    pub disconnect_clearance: f64,
    pub min_cluster_size: usize,
    /// Keyframes (most recent first) contributing to the local map slice.
    pub window: usize,
}

impl Default for FreespaceConfig {
    fn default() -> Self {
        Self {
            resolution: 0.1,
            z_low: 0.3,
            z_high: 1.8,
            sensor_height: 1.0,
            max_ray_length: 10.0,
            stride: 3,
            min_clearance: 0.25,
            disconnect_clearance: 0.6,
            min_cluster_size: 10,
            window: 12,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellState {
    Unknown,
    Free,
    Occupied,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OccupancyGrid {
    /// Map coordinates of the corner of cell (0, 0).
    pub origin: Vector2<f64>,
    pub resolution: f64,
    pub width: usize,
    pub height: usize,
    pub cells: Vec<CellState>,
}

impl OccupancyGrid {
    pub fn new(origin: Vector2<f64>, resolution: f64, width: usize, height: usize) -> Self {
        assert!(resolution > 0.0);
        Self {
            origin,
            resolution,
            width,
            height,
            cells: vec![CellState::Unknown; width * height],
        }
    }

    pub fn index(&self, ix: usize, iy: usize) -> usize {
        iy * self.width + ix
    }

    pub fn get(&self, ix: usize, iy: usize) -> CellState {
        self.cells[self.index(ix, iy)]
    }

    pub fn set(&mut self, ix: usize, iy: usize, s: CellState) {
        let i = self.index(ix, iy);
        self.cells[i] = s;
    }

    pub fn cell_of(&self, p: &Vector2<f64>) -> Option<(usize, usize)> {
        let fx = ((p.x - self.origin.x) / self.resolution).floor();
        let fy = ((p.y - self.origin.y) / self.resolution).floor();
        if fx < 0.0 || fy < 0.0 || fx >= self.width as f64 || fy >= self.height as f64 {
            return None;
        }
        Some((fx as usize, fy as usize))
    }

    pub fn cell_center(&self, ix: usize, iy: usize) -> Vector2<f64> {
        self.origin + Vector2::new(ix as f64 + 0.5, iy as f64 + 0.5) * self.resolution
    }

    /// Plain PGM (P2): free white, occupied black, unknown grey.
    pub fn to_pgm(&self) -> String {
        let mut s = format!("P2\n{} {}\n255\n", self.width, self.height);
        for iy in (0..self.height).rev() {
            let row: Vec<&str> = (0..self.width)
                .map(|ix| match self.get(ix, iy) {
                    CellState::Free => "255",
                    CellState::Occupied => "0",
                    CellState::Unknown => "128",
                })
                .collect();
            s.push_str(&row.join(" "));
            s.push('\n');
        }
        s
    }
}

/// Unsigned distance to the nearest occupied or unknown cell, in meters.
#[derive(Clone, Debug, PartialEq)]
pub struct EsdfGrid {
    pub origin: Vector2<f64>,
    pub resolution: f64,
    pub width: usize,
    pub height: usize,
    pub distance: Vec<f64>,
}

impl EsdfGrid {
    pub fn get(&self, ix: usize, iy: usize) -> f64 {
        self.distance[iy * self.width + ix]
    }

    pub fn cell_center(&self, ix: usize, iy: usize) -> Vector2<f64> {
        self.origin + Vector2::new(ix as f64 + 0.5, iy as f64 + 0.5) * self.resolution
    }

    pub fn to_pgm(&self) -> String {
        let max = self
            .distance
            .iter()
            .copied()
            .filter(|d| d.is_finite())
            .fold(0.0f64, f64::max)
            .max(f64::MIN_POSITIVE);
        let mut s = format!("P2\n{} {}\n255\n", self.width, self.height);
        for iy in (0..self.height).rev() {
            let row: Vec<String> = (0..self.width)
                .map(|ix| ((self.get(ix, iy).min(max) / max) * 255.0).round().to_string())
                .collect();
            s.push_str(&row.join(" "));
            s.push('\n');
        }
        s
    }
}

/// Rays from one sensor position to the points it observed, map frame.
#[derive(Clone, Copy, Debug)]
pub struct RayBundle<'a> {
    pub origin: Vector3<f64>,
    pub points: &'a [Vector3<f64>],
}

/// Cells visited by the integer line from `a` to `b`, both ends included.
pub fn bresenham(a: (i64, i64), b: (i64, i64)) -> Vec<(i64, i64)> {
    let (mut x, mut y) = a;
    let dx = (b.0 - a.0).abs();
    let dy = -(b.1 - a.1).abs();
    let sx = if a.0 < b.0 { 1 } else { -1 };
    let sy = if a.1 < b.1 { 1 } else { -1 };
    let mut err = dx + dy;
    let mut out = Vec::with_capacity((dx - dy) as usize + 1);
    loop {
        out.push((x, y));
        if (x, y) == b {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
    out
}

/// Occupancy of the height band `[ground_z + z_low, ground_z + z_high]`.
///
/// Cells crossed by a ray (endpoints excluded) become free; cells holding a
/// band point become occupied and stay so. Everything else is unknown.
pub fn rasterize_map(
    bundles: &[RayBundle<'_>],
    ground_z: f64,
    cfg: &FreespaceConfig,
) -> Result<OccupancyGrid, FreespaceError> {
    let total: usize = bundles.iter().map(|b| b.points.len()).sum();
    if total == 0 {
        return Err(FreespaceError::EmptyInput);
    }
    let mut lo = Vector2::repeat(f64::INFINITY);
    let mut hi = Vector2::repeat(f64::NEG_INFINITY);
    for b in bundles {
        for p in b.points.iter().chain(std::iter::once(&b.origin)) {
            lo = lo.inf(&p.xy());
            hi = hi.sup(&p.xy());
        }
    }
    let res = cfg.resolution;
    let pad = 2.0 * res;
    let origin = Vector2::new(((lo.x - pad) / res).floor() * res, ((lo.y - pad) / res).floor() * res);
    let width = ((hi.x + pad - origin.x) / res).ceil() as usize + 1;
    let height = ((hi.y + pad - origin.y) / res).ceil() as usize + 1;
    let mut grid = OccupancyGrid::new(origin, res, width, height);
    let cell = |p: &Vector2<f64>| -> (i64, i64) {
        (
            ((p.x - origin.x) / res).floor() as i64,
            ((p.y - origin.y) / res).floor() as i64,
        )
    };

    for b in bundles {
        let o = cell(&b.origin.xy());
        for p in b.points {
            if (p.xy() - b.origin.xy()).norm() > cfg.max_ray_length {
                continue;
            }
            let line = bresenham(o, cell(&p.xy()));
            for &(x, y) in &line[..line.len() - 1] {
                grid.set(x as usize, y as usize, CellState::Free);
            }
        }
    }
    for b in bundles {
        for p in b.points {
            let h = p.z - ground_z;
            if h >= cfg.z_low && h <= cfg.z_high {
                let (x, y) = cell(&p.xy());
                grid.set(x as usize, y as usize, CellState::Occupied);
            }
        }
    }
    Ok(grid)
}

const FAR: f64 = 1e20;

/// Squared 1D distance transform of a sampled function (lower envelope of parabolas).
fn edt_1d(f: &[f64], out: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let n = f.len();
    if n == 0 {
        return;
    }
    let mut k = 0usize;
    v[0] = 0;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in 1..n {
        let fq = f[q] + (q * q) as f64;
        let mut s;
        loop {
            let p = v[k];
            s = (fq - (f[p] + (p * p) as f64)) / (2.0 * (q as f64 - p as f64));
            // z[0] is -inf, so this never pops the first parabola
            if s <= z[k] {
                k -= 1;
            } else {
                break;
            }
        }
        k += 1;
        v[k] = q;
        z[k] = s;
        z[k + 1] = f64::INFINITY;
    }
    k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let d = q as f64 - v[k] as f64;
        *o = d * d + f[v[k]];
    }
}

/// Exact Euclidean distance transform; unknown cells count as obstacles.
pub fn compute_esdf(grid: &OccupancyGrid) -> EsdfGrid {
    let (w, h) = (grid.width, grid.height);
    let mut sq: Vec<f64> = grid
        .cells
        .iter()
        .map(|c| if *c == CellState::Free { FAR } else { 0.0 })
        .collect();
    let n = w.max(h);
    let mut f = vec![0.0; n];
    let mut out = vec![0.0; n];
    let mut v = vec![0usize; n];
    let mut z = vec![0.0; n + 1];
    for x in 0..w {
        for y in 0..h {
            f[y] = sq[y * w + x];
        }
        edt_1d(&f[..h], &mut out[..h], &mut v, &mut z);
        for y in 0..h {
            sq[y * w + x] = out[y];
        }
    }
    for y in 0..h {
        f[..w].copy_from_slice(&sq[y * w..(y + 1) * w]);
        edt_1d(&f[..w], &mut out[..w], &mut v, &mut z);
        sq[y * w..(y + 1) * w].copy_from_slice(&out[..w]);
    }
    let distance = sq
        .into_iter()
        .map(|d| {
            if d >= FAR {
                f64::INFINITY
            } else {
                d.sqrt() * grid.resolution
            }
        })
        .collect();
    EsdfGrid {
        origin: grid.origin,
        resolution: grid.resolution,
        width: w,
        height: h,
        distance,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FreeVertex {
    pub position: Vector2<f64>,
    pub clearance: f64,
    pub cell: (usize, usize),
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct FreeSpaceGraph {
    pub vertices: Vec<FreeVertex>,
    /// Undirected, stored once with `a < b`.
    pub edges: Vec<(usize, usize)>,
}

impl FreeSpaceGraph {
    pub fn neighbors(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.vertices.len()];
        for &(a, b) in &self.edges {
            adj[a].push(b);
            adj[b].push(a);
        }
        adj
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Cluster {
    /// Indices into the free-space graph's vertices, ascending.
    pub vertices: Vec<usize>,
    pub positions: Vec<Vector2<f64>>,
    pub clearances: Vec<f64>,
    pub centroid: Vector2<f64>,
}

/// Lattice vertices every `stride` cells with clearance at least
/// `min_clearance`, joined to their 4-neighbors when the segment between them
/// crosses only free cells.
pub fn build_free_space_graph(esdf: &EsdfGrid, cfg: &FreespaceConfig) -> FreeSpaceGraph {
    let s = cfg.stride.max(1);
    let (lw, lh) = (esdf.width.div_ceil(s), esdf.height.div_ceil(s));
    let mut slot = vec![usize::MAX; lw * lh];
    let mut g = FreeSpaceGraph::default();
    for ly in 0..lh {
        for lx in 0..lw {
            let (ix, iy) = (lx * s, ly * s);
            let c = esdf.get(ix, iy);
            if c > 0.0 && c >= cfg.min_clearance {
                slot[ly * lw + lx] = g.vertices.len();
                g.vertices.push(FreeVertex {
                    position: esdf.cell_center(ix, iy),
                    clearance: c,
                    cell: (ix, iy),
                });
            }
        }
    }
    let clear_path = |a: (usize, usize), b: (usize, usize)| {
        bresenham((a.0 as i64, a.1 as i64), (b.0 as i64, b.1 as i64))
            .iter()
            .all(|&(x, y)| esdf.get(x as usize, y as usize) > 0.0)
    };
    for ly in 0..lh {
        for lx in 0..lw {
            let a = slot[ly * lw + lx];
            if a == usize::MAX {
                continue;
            }
            for (nx, ny) in [(lx + 1, ly), (lx, ly + 1)] {
                if nx >= lw || ny >= lh {
                    continue;
                }
                let b = slot[ny * lw + nx];
                if b != usize::MAX && clear_path(g.vertices[a].cell, g.vertices[b].cell) {
                    g.edges.push((a.min(b), a.max(b)));
                }
            }
        }
    }
    g
}

/// Connected components over `keep`-ed vertices, each ascending, ordered by
/// their smallest member.
pub fn connected_components(g: &FreeSpaceGraph, keep: &[bool]) -> Vec<Vec<usize>> {
    let adj = g.neighbors();
    let mut seen = vec![false; g.vertices.len()];
    let mut out = Vec::new();
    for start in 0..g.vertices.len() {
        if seen[start] || !keep[start] {
            continue;
        }
        let mut comp = vec![];
        let mut queue = VecDeque::from([start]);
        seen[start] = true;
        while let Some(v) = queue.pop_front() {
            comp.push(v);
            for &n in &adj[v] {
                if keep[n] && !seen[n] {
                    seen[n] = true;
                    queue.push_back(n);
                }
            }
        }
        comp.sort_unstable();
        out.push(comp);
    }
    out
}

/// Drops vertices below `disconnect_clearance` and returns the remaining
/// components that have at least `min_cluster_size` vertices.
pub fn split_clusters(g: &FreeSpaceGraph, cfg: &FreespaceConfig) -> Vec<Cluster> {
    let keep: Vec<bool> = g
        .vertices
        .iter()
        .map(|v| v.clearance >= cfg.disconnect_clearance)
        .collect();
    connected_components(g, &keep)
        .into_iter()
        .filter(|c| c.len() >= cfg.min_cluster_size)
        .map(|vertices| {
            let positions: Vec<Vector2<f64>> = vertices.iter().map(|&i| g.vertices[i].position).collect();
            let clearances = vertices.iter().map(|&i| g.vertices[i].clearance).collect();
            let centroid = positions.iter().sum::<Vector2<f64>>() / positions.len() as f64;
            Cluster {
                vertices,
                positions,
                clearances,
                centroid,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_wall_point_is_one_cell() {
        let pts = [Vector3::new(1.05, 0.05, 1.0)];
        let g = rasterize_map(
            &[RayBundle {
                origin: Vector3::new(1.05, 0.05, 1.0),
                points: &pts,
            }],
            0.0,
            &FreespaceConfig::default(),
        )
        .unwrap();
        assert_eq!(g.cells.iter().filter(|c| **c == CellState::Occupied).count(), 1);
    }

    #[test]
    fn ray_cells_between_are_free() {
        let pts = [Vector3::new(1.05, 0.05, 1.0)];
        let g = rasterize_map(
            &[RayBundle {
                origin: Vector3::new(0.05, 0.05, 1.0),
                points: &pts,
            }],
            0.0,
            &FreespaceConfig::default(),
        )
        .unwrap();
        let (ox, oy) = g.cell_of(&Vector2::new(0.05, 0.05)).unwrap();
        let (px, _) = g.cell_of(&Vector2::new(1.05, 0.05)).unwrap();
        assert_eq!(px - ox, 10);
        for x in ox..px {
            assert_eq!(g.get(x, oy), CellState::Free);
        }
        assert_eq!(g.get(px, oy), CellState::Occupied);
    }

    #[test]
    fn points_above_band_are_ignored() {
        let pts = [Vector3::new(1.0, 0.0, 2.5), Vector3::new(2.0, 0.0, 1.0)];
        let g = rasterize_map(
            &[RayBundle {
                origin: Vector3::new(0.0, 0.0, 1.0),
                points: &pts,
            }],
            0.0,
            &FreespaceConfig::default(),
        )
        .unwrap();
        assert_eq!(g.cells.iter().filter(|c| **c == CellState::Occupied).count(), 1);
        assert_eq!(
            rasterize_map(&[], 0.0, &FreespaceConfig::default()),
            Err(FreespaceError::EmptyInput)
        );
    }

    #[test]
    fn esdf_neighbor_distances() {
        let mut g = OccupancyGrid::new(Vector2::zeros(), 0.1, 5, 5);
        g.cells.fill(CellState::Free);
        g.set(2, 2, CellState::Occupied);
        let e = compute_esdf(&g);
        assert_eq!(e.get(2, 2), 0.0);
        assert_eq!(e.get(3, 2), 0.1);
        assert_eq!(e.get(3, 3), 2f64.sqrt() * 0.1);
    }

    #[test]
    fn fully_occupied_grid_has_no_vertices() {
        let mut g = OccupancyGrid::new(Vector2::zeros(), 0.1, 10, 10);
        g.cells.fill(CellState::Occupied);
        let fs = build_free_space_graph(&compute_esdf(&g), &FreespaceConfig::default());
        assert!(fs.vertices.is_empty());
    }

    #[test]
    fn tiny_graph_gives_no_cluster() {
        let g = FreeSpaceGraph {
            vertices: (0..3)
                .map(|i| FreeVertex {
                    position: Vector2::new(i as f64, 0.0),
                    clearance: 1.0,
                    cell: (i, 0),
                })
                .collect(),
            edges: vec![(0, 1), (1, 2)],
        };
        assert!(split_clusters(&g, &FreespaceConfig::default()).is_empty());
    }
}
