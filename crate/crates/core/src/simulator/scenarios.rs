//! Bundled worlds and paths used by the examples and the test suites.

use super::{Door, FloorPlan, Rect, SimConfig, Waypoint, World};

#[derive(Clone, Debug, PartialEq)]
pub struct Scenario {
    pub world: World,
    pub waypoints: Vec<Waypoint>,
    pub config: SimConfig,
}

/// Four 4×5 m rooms in a 2×2 block joined by 1 m doors; the path visits
/// every room and returns to its start.
pub fn four_rooms(config: SimConfig) -> Scenario {
    let world = World::single_floor(four_room_block(), four_room_doors());
    Scenario {
        world,
        waypoints: four_room_loop(0),
        config,
    }
}

fn four_room_block() -> Vec<Rect> {
    vec![
        Rect::new(0.0, 0.0, 4.0, 5.0),
        Rect::new(4.0, 0.0, 8.0, 5.0),
        Rect::new(0.0, 5.0, 4.0, 10.0),
        Rect::new(4.0, 5.0, 8.0, 10.0),
    ]
}

fn four_room_doors() -> Vec<Door> {
    vec![
        Door::new(4.0, 2.5, 1.0),
        Door::new(6.0, 5.0, 1.0),
        Door::new(4.0, 7.5, 1.0),
        Door::new(2.0, 5.0, 1.0),
    ]
}

fn four_room_loop(floor: u32) -> Vec<Waypoint> {
    [(2.0, 2.5), (6.0, 2.5), (6.0, 7.5), (2.0, 7.5), (2.0, 2.5)]
        .into_iter()
        .map(|(x, y)| Waypoint::new(x, y, floor))
        .collect()
}

/// A closed 2.5×20 m corridor walked along its midline.
pub fn corridor(config: SimConfig) -> Scenario {
    let world = World {
        floors: vec![FloorPlan {
            id: 0,
            z_base: 0.0,
            rooms: Vec::new(),
            corridors: vec![Rect::new(0.0, 0.0, 2.5, 20.0)],
            doors: Vec::new(),
        }],
        wall_height: 2.5,
        wall_thickness: 0.1,
    };
    Scenario {
        world,
        waypoints: vec![Waypoint::new(1.25, 1.0, 0), Waypoint::new(1.25, 19.0, 0)],
        config,
    }
}

/// Two stacked copies of a two-room plan at z = 0 and z = 3. The path crosses
/// both rooms of the ground floor, teleports up and crosses back.
pub fn two_floors(config: SimConfig) -> Scenario {
    let plan = |id: u32, z_base: f64| FloorPlan {
        id,
        z_base,
        rooms: vec![Rect::new(0.0, 0.0, 4.0, 5.0), Rect::new(4.0, 0.0, 8.0, 5.0)],
        corridors: Vec::new(),
        doors: vec![Door::new(4.0, 2.5, 1.0)],
    };
    let world = World {
        floors: vec![plan(0, 0.0), plan(1, 3.0)],
        wall_height: 2.5,
        wall_thickness: 0.1,
    };
    let waypoints = vec![
        Waypoint::new(1.5, 2.5, 0),
        Waypoint::new(6.5, 2.5, 0),
        Waypoint::new(6.5, 2.5, 1),
        Waypoint::new(1.5, 2.5, 1),
    ];
    Scenario {
        world,
        waypoints,
        config,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_worlds_are_valid() {
        for s in [
            four_rooms(SimConfig::default()),
            corridor(SimConfig::default()),
            two_floors(SimConfig::default()),
        ] {
            s.world.validate().unwrap();
            super::super::ground_truth_poses(&s.world, &s.waypoints, &s.config).unwrap();
        }
    }
}
