//! Shared test oracles, all deliberately independent of the library's own
//! search paths: Floyd-Warshall for distances, plain recursive enumeration
//! for schedules, a Held-Karp subset DP for optima, and a from-definitions
//! schedule checker.

#![allow(dead_code)]

use std::sync::Arc;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use ridesharing::cost::{Cost, INFINITE};
use ridesharing::instance::{ReschedulingInstance, SequenceWalk, WaitingTrip};
use ridesharing::roadnet::{DistanceOracle, RoadNetwork, VertexId};
use ridesharing::trips::{TripId, TripRequest, Waypoint, WaypointKind};

/// All-pairs shortest distances by Floyd-Warshall.
pub fn floyd_warshall(net: &RoadNetwork) -> Vec<Vec<Cost>> {
    let n = net.vertex_count() as usize;
    let mut d = vec![vec![INFINITE; n]; n];
    for (i, row) in d.iter_mut().enumerate() {
        row[i] = 0;
    }
    for &(u, v, w) in net.edges() {
        let (u, v) = (u as usize, v as usize);
        if w < d[u][v] {
            d[u][v] = w;
            d[v][u] = w;
        }
    }
    for k in 0..n {
        for i in 0..n {
            if d[i][k] == INFINITE {
                continue;
            }
            for j in 0..n {
                if d[k][j] == INFINITE {
                    continue;
                }
                let via = d[i][k] + d[k][j];
                if via < d[i][j] {
                    d[i][j] = via;
                }
            }
        }
    }
    d
}

/// Random connected undirected graph: a random spanning tree plus extras.
pub fn random_connected_graph(rng: &mut ChaCha8Rng, n: u32, extra_edges: usize) -> RoadNetwork {
    let mut edges = Vec::new();
    for v in 1..n {
        let u = rng.gen_range(0..v);
        edges.push((u, v, rng.gen_range(1..=100) as Cost));
    }
    for _ in 0..extra_edges {
        let u = rng.gen_range(0..n);
        let v = rng.gen_range(0..n);
        if u != v {
            edges.push((u, v, rng.gen_range(1..=100) as Cost));
        }
    }
    RoadNetwork::new(n, edges)
}

/// Every budget- and precedence-valid complete ordering of the instance's
/// pending waypoints, by plain recursive enumeration.
pub fn enumerate_valid_sequences(
    oracle: &DistanceOracle,
    inst: &ReschedulingInstance,
) -> Vec<(Vec<Waypoint>, Cost)> {
    let points = inst.pending_waypoints(oracle);
    let mut out = Vec::new();
    fn rec(
        oracle: &DistanceOracle,
        points: &[ridesharing::instance::PendingPoint],
        walk: SequenceWalk<'_>,
        prefix: &mut Vec<Waypoint>,
        out: &mut Vec<(Vec<Waypoint>, Cost)>,
    ) {
        if prefix.len() == points.len() {
            out.push((prefix.clone(), walk.dist));
            return;
        }
        for idx in 0..points.len() {
            if walk.is_used(idx) {
                continue;
            }
            let mut next = walk.clone();
            if !next.try_step(oracle, idx) {
                continue;
            }
            prefix.push(points[idx].waypoint);
            rec(oracle, points, next, prefix, out);
            prefix.pop();
        }
    }
    let walk = SequenceWalk::new(inst, &points);
    rec(oracle, &points, walk, &mut Vec::new(), &mut out);
    out
}

/// Exact optimum by Held-Karp dynamic programming over (subset, last point),
/// honoring precedence and budgets. Budget feasibility is not
/// subset-decomposable in general, so this oracle is only used on instances
/// with unlimited budgets, where it reduces to cost minimization.
pub fn held_karp_unconstrained(
    oracle: &DistanceOracle,
    inst: &ReschedulingInstance,
) -> Option<Cost> {
    let points = inst.pending_waypoints(oracle);
    let n = points.len();
    assert!(n <= 16);
    if n == 0 {
        return Some(inst.start_extra);
    }
    let pickup_bit = |trip: TripId| -> Option<usize> {
        points.iter().position(|p| {
            p.waypoint.kind == WaypointKind::Pickup && p.waypoint.trip == trip
        })
    };
    let full = (1usize << n) - 1;
    let mut dp = vec![vec![INFINITE; n]; full + 1];
    for (i, p) in points.iter().enumerate() {
        if p.waypoint.kind == WaypointKind::Dropoff && !p.anchored_at_start {
            continue; // needs its pickup first
        }
        let d = oracle.distance(inst.start, p.waypoint.vertex);
        dp[1 << i][i] = inst.start_extra.saturating_add(d);
    }
    for mask in 1..=full {
        for last in 0..n {
            if mask & (1 << last) == 0 || dp[mask][last] == INFINITE {
                continue;
            }
            for next in 0..n {
                if mask & (1 << next) != 0 {
                    continue;
                }
                let p = &points[next];
                if p.waypoint.kind == WaypointKind::Dropoff && !p.anchored_at_start {
                    let pb = pickup_bit(p.waypoint.trip).unwrap();
                    if mask & (1 << pb) == 0 {
                        continue;
                    }
                }
                let step = oracle.distance(points[last].waypoint.vertex, p.waypoint.vertex);
                let cost = dp[mask][last].saturating_add(step);
                let entry = &mut dp[mask | (1 << next)][next];
                if cost < *entry {
                    *entry = cost;
                }
            }
        }
    }
    let best = (0..n).map(|last| dp[full][last]).min().unwrap();
    if best == INFINITE {
        None
    } else {
        Some(best)
    }
}

/// Uniform random rescheduling instance on the given network.
pub struct InstanceParams {
    pub max_trips: usize,
    pub wait: Cost,
    pub detour_bp: u32,
    pub onboard_fraction: f64,
    pub max_onboard: Option<usize>,
}

pub fn random_instance(
    rng: &mut ChaCha8Rng,
    net: &RoadNetwork,
    oracle: &DistanceOracle,
    params: &InstanceParams,
) -> ReschedulingInstance {
    let n = net.vertex_count();
    let mut inst = ReschedulingInstance::at(rng.gen_range(0..n));
    inst.max_onboard = params.max_onboard;
    let trips = rng.gen_range(1..=params.max_trips);
    for id in 0..trips as u32 {
        let s = rng.gen_range(0..n);
        let mut e = rng.gen_range(0..n);
        while e == s {
            e = rng.gen_range(0..n);
        }
        if rng.gen_bool(params.onboard_fraction) {
            // already picked up: ride budget partially consumed
            let full = ridesharing::cost::service_budget(oracle.distance(s, e), params.detour_bp);
            let consumed = rng.gen_range(0..=full / 2);
            inst.onboard.push(ridesharing::instance::OnboardTrip {
                trip: TripId(id),
                dropoff: e,
                ride_budget: full - consumed,
            });
        } else {
            let full = ridesharing::cost::service_budget(oracle.distance(s, e), params.detour_bp);
            let consumed_wait = rng.gen_range(0..=params.wait / 2);
            inst.waiting.push(WaitingTrip {
                trip: TripId(id),
                pickup: s,
                dropoff: e,
                wait_budget: params.wait - consumed_wait,
                ride_budget: full,
            });
        }
    }
    // the last trip becomes the new request when any waiting trip exists
    if let Some(last) = inst.waiting.pop() {
        inst.new_trip = Some(TripRequest {
            id: last.trip,
            source: last.pickup,
            destination: last.dropoff,
            request_time: 0,
            max_wait: last.wait_budget,
            detour_bp: params.detour_bp,
        });
    }
    inst
}

pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn grid_oracle(rows: u32, cols: u32, weight: Cost) -> DistanceOracle {
    DistanceOracle::new(Arc::new(RoadNetwork::grid(rows, cols, weight)))
}

/// Request with uniform constraints, for tree-building scenarios.
pub fn request(id: u32, s: VertexId, e: VertexId, wait: Cost, bp: u32) -> TripRequest {
    TripRequest { id: TripId(id), source: s, destination: e, request_time: 0, max_wait: wait, detour_bp: bp }
}
