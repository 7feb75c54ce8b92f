//! Grid-index candidate filtering against an exact network-distance filter.

mod common;

use common::*;
use rand::prelude::*;
use ridesharing::dispatch::{candidates, wait_radius_m, GridIndex};
use ridesharing::roadnet::RoadNetwork;

#[test]
fn candidates_cover_every_vehicle_within_network_range() {
    let mut rng = seeded(311);
    let net = RoadNetwork::grid(20, 20, 300);
    let coords = net.coords().unwrap().to_vec();
    let oracle = grid_oracle(20, 20, 300);
    let wait = 3_000; // 5 minutes
    let speed = 14.0;
    for _ in 0..30 {
        let fleet = 40;
        let cell = wait_radius_m(wait, speed) / 2.0;
        let mut index = GridIndex::new(&coords, cell, fleet);
        let positions: Vec<u32> = (0..fleet)
            .map(|vid| {
                let v = rng.gen_range(0..net.vertex_count());
                let (x, y) = coords[v as usize];
                index.update(vid as u32, x, y);
                v
            })
            .collect();
        let pickup = rng.gen_range(0..net.vertex_count());
        let got = candidates(Some(&index), Some(&coords), pickup, wait, speed, 0.0, fleet);
        for (vid, &pos) in positions.iter().enumerate() {
            // time-weighted edges: network travel time doubles as distance
            if oracle.distance(pos, pickup) <= wait {
                assert!(
                    got.contains(&(vid as u32)),
                    "vehicle {vid} within network range of {pickup} but filtered out"
                );
            }
        }
    }
}

#[test]
fn coordinate_free_networks_fall_back_to_the_whole_fleet() {
    let got = candidates(None, None, 3, 6_000, 14.0, 0.0, 7);
    assert_eq!(got, vec![0, 1, 2, 3, 4, 5, 6]);
}
