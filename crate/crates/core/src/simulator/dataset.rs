use std::fs;
use std::path::Path;

use super::{ScanFrame, SimError, World};
use crate::perception::{read_xyz, write_xyz};
use crate::trajectory::{read_tum, write_tum, Stamped};

pub const DATASET_FILES: [&str; 4] = ["world.json", "gt.tum", "odom.tum", "scans"];

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub world: World,
    pub frames: Vec<ScanFrame>,
}

fn scan_name(i: usize) -> String {
    format!("scan_{i:06}.xyz")
}

pub fn write_dataset(world: &World, frames: &[ScanFrame], dir: &Path) -> Result<(), SimError> {
    fs::create_dir_all(dir.join("scans"))?;
    fs::write(dir.join("world.json"), world.to_json() + "\n")?;
    let stamped = |f: fn(&ScanFrame) -> crate::geometry::Pose| -> Vec<Stamped> {
        frames
            .iter()
            .map(|s| Stamped {
                timestamp: s.timestamp,
                pose: f(s),
            })
            .collect()
    };
    write_tum(&dir.join("gt.tum"), &stamped(|s| s.ground_truth))?;
    write_tum(&dir.join("odom.tum"), &stamped(|s| s.odometry))?;
    for (i, f) in frames.iter().enumerate() {
        write_xyz(&dir.join("scans").join(scan_name(i)), &f.cloud)?;
    }
    Ok(())
}

/// Reads a dataset directory. Scan files are matched to trajectory lines by
/// index; a count or timestamp mismatch is a `BadDataset` error.
pub fn read_dataset(dir: &Path) -> Result<Dataset, SimError> {
    for name in DATASET_FILES {
        if !dir.join(name).exists() {
            return Err(SimError::BadDataset(format!("{} is missing {name}", dir.display())));
        }
    }
    let world = World::from_json(&fs::read_to_string(dir.join("world.json"))?)?;
    let gt = read_tum(&dir.join("gt.tum"))?;
    let odom = read_tum(&dir.join("odom.tum"))?;
    if gt.len() != odom.len() {
        return Err(SimError::BadDataset(format!(
            "gt.tum has {} poses but odom.tum has {}",
            gt.len(),
            odom.len()
        )));
    }
    let scans = dir.join("scans");
    let mut frames = Vec::with_capacity(gt.len());
    for (i, (g, o)) in gt.iter().zip(&odom).enumerate() {
        if g.timestamp != o.timestamp {
            return Err(SimError::BadDataset(format!("timestamp mismatch on line {}", i + 1)));
        }
        let path = scans.join(scan_name(i));
        if !path.exists() {
            return Err(SimError::BadDataset(format!("missing {}", path.display())));
        }
        frames.push(ScanFrame {
            timestamp: g.timestamp,
            ground_truth: g.pose,
            odometry: o.pose,
            cloud: read_xyz(&path)?,
        });
    }
    if scans.join(scan_name(gt.len())).exists() {
        return Err(SimError::BadDataset("more scans than poses".into()));
    }
    Ok(Dataset { world, frames })
}
