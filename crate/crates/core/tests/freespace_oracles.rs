mod common;

use nalgebra::Vector2;
use proptest::prelude::*;

use common::{brute_force_clusters, brute_force_esdf, random_grid, rng};
use sgraphs::freespace::{
    build_free_space_graph, compute_esdf, split_clusters, CellState, FreeSpaceGraph, FreeVertex, FreespaceConfig,
    OccupancyGrid,
};

#[test]
fn esdf_equals_brute_force_on_random_grids() {
    let mut r = rng(50);
    for trial in 0..20 {
        let g = random_grid(&mut r, 50, 50, 0.9);
        assert_eq!(compute_esdf(&g).distance, brute_force_esdf(&g), "grid {trial}");
    }
}

#[test]
fn esdf_of_all_free_grid_is_infinite() {
    let mut g = OccupancyGrid::new(Vector2::zeros(), 0.1, 7, 3);
    for y in 0..3 {
        for x in 0..7 {
            g.set(x, y, CellState::Free);
        }
    }
    assert!(compute_esdf(&g).distance.iter().all(|d| d.is_infinite()));
}

#[test]
fn esdf_handles_non_square_grids() {
    let mut r = rng(51);
    for (w, h) in [(1, 1), (1, 40), (40, 1), (13, 57)] {
        let g = random_grid(&mut r, w, h, 0.8);
        assert_eq!(compute_esdf(&g).distance, brute_force_esdf(&g), "{w}x{h}");
    }
}

#[test]
fn clusters_equal_brute_force_components_on_esdf_lattices() {
    let mut r = rng(52);
    let cfg = FreespaceConfig {
        stride: 1,
        min_clearance: 0.0,
        disconnect_clearance: 0.15,
        min_cluster_size: 3,
        ..FreespaceConfig::default()
    };
    let mut nonempty = 0;
    for trial in 0..20 {
        let g = random_grid(&mut r, 50, 50, 0.93);
        let fsg = build_free_space_graph(&compute_esdf(&g), &cfg);
        let got: Vec<Vec<usize>> = split_clusters(&fsg, &cfg).into_iter().map(|c| c.vertices).collect();
        nonempty += usize::from(got.len() > 1);
        assert_eq!(
            got,
            brute_force_clusters(&fsg, cfg.disconnect_clearance, cfg.min_cluster_size),
            "grid {trial}"
        );
    }
    assert!(nonempty > 10, "grids should split into several clusters");
}

fn arbitrary_graph() -> impl Strategy<Value = FreeSpaceGraph> {
    (1usize..40).prop_flat_map(|n| {
        (
            prop::collection::vec(0.0f64..2.0, n),
            prop::collection::vec((0..n, 0..n), 0..80),
        )
            .prop_map(|(clearances, pairs)| {
                let vertices = clearances
                    .iter()
                    .enumerate()
                    .map(|(i, &c)| FreeVertex {
                        position: Vector2::new(i as f64, (i * i) as f64 * 0.1),
                        clearance: c,
                        cell: (i, 0),
                    })
                    .collect();
                let mut edges: Vec<(usize, usize)> = pairs
                    .into_iter()
                    .filter(|(a, b)| a != b)
                    .map(|(a, b)| (a.min(b), a.max(b)))
                    .collect();
                edges.sort_unstable();
                edges.dedup();
                FreeSpaceGraph { vertices, edges }
            })
    })
}

proptest! {
    #[test]
    fn clusters_equal_brute_force_components(g in arbitrary_graph(), threshold in 0.0f64..2.0, min_size in 1usize..4) {
        let cfg = FreespaceConfig { disconnect_clearance: threshold, min_cluster_size: min_size, ..FreespaceConfig::default() };
        let clusters = split_clusters(&g, &cfg);
        let got: Vec<Vec<usize>> = clusters.iter().map(|c| c.vertices.clone()).collect();
        prop_assert_eq!(got, brute_force_clusters(&g, threshold, min_size));
        for c in &clusters {
            let mean = c.vertices.iter().map(|&i| g.vertices[i].position).sum::<Vector2<f64>>() / c.vertices.len() as f64;
            prop_assert!((c.centroid - mean).norm() < 1e-9);
        }
    }

    #[test]
    fn esdf_is_zero_exactly_on_blocked_cells(seed in 0u64..1000) {
        let mut r = rng(seed);
        let g = random_grid(&mut r, 12, 9, 0.7);
        let e = compute_esdf(&g);
        for y in 0..9 {
            for x in 0..12 {
                prop_assert_eq!(e.get(x, y) == 0.0, g.get(x, y) != CellState::Free);
            }
        }
    }
}
