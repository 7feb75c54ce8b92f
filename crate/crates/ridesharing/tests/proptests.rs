//! Property-based invariants over randomized networks, schedules, and
//! query streams.

mod common;

use std::sync::Arc;

use common::*;
use proptest::prelude::*;
use rand::Rng as _;
use ridesharing::brute_force;
use ridesharing::cost::INFINITE;
use ridesharing::instance::{OnboardTrip, ReschedulingInstance};
use ridesharing::roadnet::DistanceOracle;
use ridesharing::trips::{trip_cost, validate_schedule, Schedule, TripId, Waypoint};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// d(u,w) <= d(u,v) + d(v,w) and d(u,v) = d(v,u) on random graphs.
    #[test]
    fn triangle_inequality_and_symmetry(seed in 0u64..500, n in 10u32..40, extra in 0usize..60) {
        let mut rng = seeded(seed);
        let net = random_connected_graph(&mut rng, n, extra);
        let oracle = DistanceOracle::new(Arc::new(net));
        for _ in 0..50 {
            let u = rng.gen_range(0..n);
            let v = rng.gen_range(0..n);
            let w = rng.gen_range(0..n);
            let duv = oracle.distance(u, v);
            prop_assert_eq!(duv, oracle.distance(v, u));
            prop_assert!(oracle.distance(u, w) <= duv.saturating_add(oracle.distance(v, w)));
        }
    }

    /// Any cache capacity returns exactly the uncached answers, and the
    /// entry count never exceeds the configured capacity.
    #[test]
    fn cache_transparency_and_bound(seed in 0u64..500, cap in 0usize..40) {
        let mut rng = seeded(seed);
        let net = Arc::new(random_connected_graph(&mut rng, 30, 40));
        let cached = DistanceOracle::with_capacities(Arc::clone(&net), cap, cap.min(5));
        let uncached = DistanceOracle::with_capacities(Arc::clone(&net), 0, 0);
        for _ in 0..120 {
            let s = rng.gen_range(0..30);
            let e = if rng.gen_bool(0.4) { s } else { rng.gen_range(0..30) };
            prop_assert_eq!(cached.distance(s, e), uncached.distance(s, e));
            prop_assert!(cached.distance_cache_len() <= cap);
            if rng.gen_bool(0.2) {
                let a = cached.path(s, e).map(|(p, c)| (p.to_vec(), c));
                let b = uncached.path(s, e).map(|(p, c)| (p.to_vec(), c));
                prop_assert_eq!(a, b);
                prop_assert!(cached.path_cache_len() <= cap.min(5));
            }
        }
    }

    /// trip_cost is additive over cut points.
    #[test]
    fn trip_cost_is_additive(seed in 0u64..500) {
        let mut rng = seeded(seed);
        let oracle = grid_oracle(6, 6, 10);
        let n = oracle.network().vertex_count();
        let len = rng.gen_range(2usize..7);
        let points: Vec<Waypoint> = (0..len)
            .map(|i| Waypoint::pickup(TripId(i as u32), rng.gen_range(0..n)))
            .collect();
        let a = 0;
        let b = rng.gen_range(0..len);
        let c = rng.gen_range(b..len);
        let whole = trip_cost(&oracle, &points, a, c);
        let split = trip_cost(&oracle, &points, a, b) + trip_cost(&oracle, &points, b, c);
        prop_assert_eq!(whole, split);
    }

    /// Dropping all three waypoints of one trip from a valid schedule
    /// leaves a valid schedule.
    #[test]
    fn dropping_a_trip_preserves_validity(seed in 0u64..2000) {
        let mut rng = seeded(seed);
        let oracle = grid_oracle(6, 6, 10);
        let n = oracle.network().vertex_count();
        let trips: Vec<_> = (0..3u32)
            .map(|id| {
                let s = rng.gen_range(0..n);
                let mut e = rng.gen_range(0..n);
                while e == s { e = rng.gen_range(0..n); }
                request(id, s, e, rng.gen_range(100..1200), rng.gen_range(0..10_000))
            })
            .collect();
        // random interleaving respecting per-trip point order
        let mut points = Vec::new();
        for t in &trips {
            points.push(Waypoint::request(t.id, rng.gen_range(0..n)));
            points.push(Waypoint::pickup(t.id, t.source));
            points.push(Waypoint::dropoff(t.id, t.destination));
        }
        for i in (1..points.len()).rev() {
            let j = rng.gen_range(0..=i);
            points.swap(i, j);
        }
        // bubble each trip back into request < pickup < dropoff order
        let mut ordered = Vec::new();
        let mut seen = std::collections::HashMap::new();
        for p in &points {
            let rank = seen.entry(p.trip).or_insert(0usize);
            let mut q = *p;
            q.kind = match rank {
                0 => ridesharing::trips::WaypointKind::Request,
                1 => ridesharing::trips::WaypointKind::Pickup,
                _ => ridesharing::trips::WaypointKind::Dropoff,
            };
            q.vertex = match q.kind {
                ridesharing::trips::WaypointKind::Request => q.vertex,
                ridesharing::trips::WaypointKind::Pickup => trips[q.trip.0 as usize].source,
                ridesharing::trips::WaypointKind::Dropoff => trips[q.trip.0 as usize].destination,
            };
            *rank += 1;
            ordered.push(q);
        }
        let sched = Schedule::new(ordered.clone(), 0, ordered[0].vertex);
        if validate_schedule(&oracle, &sched, &trips).is_ok() {
            for drop in &trips {
                let kept: Vec<Waypoint> =
                    ordered.iter().copied().filter(|w| w.trip != drop.id).collect();
                let sub = Schedule::new(kept, 0, ordered[0].vertex);
                prop_assert_eq!(validate_schedule(&oracle, &sub, &trips), Ok(()));
            }
        }
    }

    /// Serving every trip directly, with the request point at the pickup,
    /// is valid for any waiting limit and any detour allowance.
    #[test]
    fn direct_service_is_always_valid(seed in 0u64..500, w in 0u64..5000, bp in 0u32..50_000) {
        let mut rng = seeded(seed);
        let oracle = grid_oracle(6, 6, 10);
        let n = oracle.network().vertex_count();
        let mut points = Vec::new();
        let mut trips = Vec::new();
        for id in 0..3u32 {
            let s = rng.gen_range(0..n);
            let mut e = rng.gen_range(0..n);
            while e == s { e = rng.gen_range(0..n); }
            trips.push(request(id, s, e, w, bp));
            points.push(Waypoint::request(TripId(id), s));
            points.push(Waypoint::pickup(TripId(id), s));
            points.push(Waypoint::dropoff(TripId(id), e));
        }
        let sched = Schedule::new(points, 0, trips[0].source);
        prop_assert_eq!(validate_schedule(&oracle, &sched, &trips), Ok(()));
    }

    /// Adding a trip to an instance never decreases the optimal cost.
    #[test]
    fn adding_a_trip_never_cheapens_the_optimum(seed in 0u64..300) {
        let mut rng = seeded(seed);
        let oracle = grid_oracle(6, 6, 10);
        let net = oracle.network_arc();
        let mut inst = random_instance(
            &mut rng,
            &net,
            &oracle,
            &InstanceParams { max_trips: 2, wait: 800, detour_bp: 8_000, onboard_fraction: 0.5, max_onboard: None },
        );
        let extra = inst.new_trip.take();
        let (without, _) = brute_force::best_schedule(&oracle, &inst).unwrap();
        inst.new_trip = extra;
        if inst.new_trip.is_none() {
            return Ok(());
        }
        let (with, _) = brute_force::best_schedule(&oracle, &inst).unwrap();
        match (without, with) {
            (Some(a), Some(b)) => prop_assert!(b.cost >= a.cost),
            (Some(_), None) | (None, None) => {}
            (None, Some(_)) => prop_assert!(false, "adding a trip cannot create feasibility"),
        }
    }

    /// With one onboard passenger and no other work, the optimal schedule
    /// is the direct drive to that dropoff.
    #[test]
    fn lone_onboard_trip_drives_direct(seed in 0u64..300) {
        let mut rng = seeded(seed);
        let oracle = grid_oracle(6, 6, 10);
        let n = oracle.network().vertex_count();
        let start = rng.gen_range(0..n);
        let drop = rng.gen_range(0..n);
        let mut inst = ReschedulingInstance::at(start);
        inst.onboard.push(OnboardTrip { trip: TripId(1), dropoff: drop, ride_budget: INFINITE });
        let (best, _) = brute_force::best_schedule(&oracle, &inst).unwrap();
        let best = best.unwrap();
        prop_assert_eq!(best.cost, oracle.distance(start, drop));
        prop_assert_eq!(best.sequence, vec![Waypoint::dropoff(TripId(1), drop)]);
    }
}
