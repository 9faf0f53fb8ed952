mod common;

use std::fs;

use proptest::prelude::*;

use common::{random_pose, rng, simulate};
use sgraphs::perception::{format_xyz, parse_xyz, PointCloud};
use sgraphs::simulator::{read_dataset, scenarios, write_dataset, SimConfig, SimError};
use sgraphs::trajectory::{format_tum, parse_tum, Stamped};

proptest! {
    #[test]
    fn tum_round_trips_bit_exact(seed in any::<u64>(), n in 1usize..30) {
        let mut r = rng(seed);
        let traj: Vec<Stamped> = (0..n)
            .map(|i| Stamped { timestamp: i as f64 * 0.1 + 1e-3 * (seed % 7) as f64, pose: random_pose(&mut r) })
            .collect();
        let text = format_tum(&traj);
        let back = parse_tum(&text, "mem").unwrap();
        prop_assert_eq!(format_tum(&back), text);
        for (a, b) in traj.iter().zip(&back) {
            prop_assert_eq!(a.timestamp, b.timestamp);
            prop_assert_eq!(a.pose.translation, b.pose.translation);
        }
    }

    #[test]
    fn xyz_round_trips_bit_exact(pts in prop::collection::vec(prop::array::uniform3(-1e3f64..1e3), 0..50)) {
        let cloud = PointCloud::new(pts.into_iter().map(Into::into).collect());
        let back = parse_xyz(&format_xyz(&cloud), "mem").unwrap();
        prop_assert_eq!(back.points, cloud.points);
    }
}

#[test]
fn dataset_round_trips_through_disk() {
    let mut s = scenarios::four_rooms(SimConfig::default());
    s.waypoints.truncate(2);
    let d = simulate(&s);
    let dir = tempfile::tempdir().unwrap();
    write_dataset(&d.world, &d.frames, dir.path()).unwrap();
    let back = read_dataset(dir.path()).unwrap();
    assert_eq!(back.world, d.world);
    assert_eq!(back.frames.len(), d.frames.len());
    for (a, b) in d.frames.iter().zip(&back.frames) {
        assert_eq!(a.timestamp, b.timestamp);
        assert_eq!(a.ground_truth.translation, b.ground_truth.translation);
        assert_eq!(a.odometry.translation, b.odometry.translation);
        assert_eq!(a.cloud.points, b.cloud.points);
    }
    assert!(dir.path().join("scans/scan_000000.xyz").is_file());
}

#[test]
fn damaged_datasets_are_rejected() {
    let mut s = scenarios::four_rooms(SimConfig::noiseless());
    s.waypoints.truncate(2);
    let d = simulate(&s);
    let dir = tempfile::tempdir().unwrap();
    write_dataset(&d.world, &d.frames, dir.path()).unwrap();

    let last = format!("scans/scan_{:06}.xyz", d.frames.len() - 1);
    let saved = fs::read(dir.path().join(&last)).unwrap();
    fs::remove_file(dir.path().join(&last)).unwrap();
    assert!(matches!(read_dataset(dir.path()), Err(SimError::BadDataset(_))));
    fs::write(dir.path().join(&last), saved).unwrap();
    assert!(read_dataset(dir.path()).is_ok());

    fs::write(
        dir.path().join(format!("scans/scan_{:06}.xyz", d.frames.len())),
        "0 0 0\n",
    )
    .unwrap();
    assert!(matches!(read_dataset(dir.path()), Err(SimError::BadDataset(_))));
    assert!(read_dataset(&dir.path().join("nope")).is_err());
}

#[test]
fn simulation_is_seeded() {
    let mut s = scenarios::four_rooms(SimConfig {
        seed: 4,
        ..SimConfig::default()
    });
    s.waypoints.truncate(2);
    let (a, b) = (simulate(&s), simulate(&s));
    assert_eq!(a.frames[3].cloud.points, b.frames[3].cloud.points);
    assert_eq!(a.frames[3].odometry, b.frames[3].odometry);
    s.config.seed = 5;
    assert_ne!(simulate(&s).frames[3].odometry, a.frames[3].odometry);
}
