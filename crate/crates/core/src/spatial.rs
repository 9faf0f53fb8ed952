//! Nearest-neighbor index over 3-D points.

use std::num::NonZeroUsize;

use kiddo::{ImmutableKdTree, SquaredEuclidean};
use nalgebra::Vector3;

pub struct PointIndex {
    tree: Option<ImmutableKdTree<f64, 3>>,
    len: usize,
}

impl PointIndex {
    pub fn new(points: &[Vector3<f64>]) -> Self {
        let entries: Vec<[f64; 3]> = points.iter().map(|p| [p.x, p.y, p.z]).collect();
        let tree = if entries.is_empty() {
            None
        } else {
            ImmutableKdTree::new_from_slice(&entries).ok()
        };
        Self {
            tree,
            len: points.len(),
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Index and squared distance of the nearest stored point.
    pub fn nearest(&self, p: &Vector3<f64>) -> Option<(usize, f64)> {
        let tree = self.tree.as_ref()?;
        let r = tree
            .query(&[p.x, p.y, p.z])
            .nearest_one::<SquaredEuclidean<f64>>()
            .execute();
        Some((r.item as usize, r.distance))
    }

    /// Up to `k` nearest stored points, closest first.
    pub fn nearest_n(&self, p: &Vector3<f64>, k: usize) -> Vec<(usize, f64)> {
        let (Some(tree), Some(k)) = (self.tree.as_ref(), NonZeroUsize::new(k)) else {
            return Vec::new();
        };
        tree.query(&[p.x, p.y, p.z])
            .nearest_n::<SquaredEuclidean<f64>>(k)
            .execute()
            .into_iter()
            .map(|r| (r.item as usize, r.distance))
            .collect()
    }
}
