//! Model-generation checks: the built model's optimum matches the
//! exhaustive scheduler, the big-M values are exactly the tightest valid
//! ones, and the LP text round-trips through the internal reader.

mod common;

use common::*;
use ridesharing::brute_force;
use ridesharing::cost::{Cost, INFINITE};
use ridesharing::mip::{build_model, emit_lp, emit_lp_file, parse_lp};
use ridesharing::trips::WaypointKind;

#[test]
fn model_optimum_equals_brute_force() {
    let mut rng = seeded(83);
    let oracle = grid_oracle(6, 6, 10);
    let net = oracle.network_arc();
    let mut nontrivial = 0;
    for round in 0..320 {
        let inst = random_instance(
            &mut rng,
            &net,
            &oracle,
            &InstanceParams {
                max_trips: 3,
                wait: 500,
                detour_bp: 5_000,
                onboard_fraction: 0.4,
                max_onboard: None,
            },
        );
        if inst.point_count() > 7 {
            continue;
        }
        let (bf, _) = brute_force::best_schedule(&oracle, &inst).unwrap();
        let model = build_model(&oracle, &inst);
        let solved = model.solve_exact();
        match (&bf, &solved) {
            (Some(b), Some((cost, _))) => {
                assert_eq!(b.cost, *cost, "round {round}: model optimum diverges");
                nontrivial += 1;
            }
            (None, None) => {}
            other => panic!("round {round}: feasibility disagrees: {other:?}"),
        }
    }
    assert!(nontrivial > 150, "only {nontrivial} solvable instances drawn");
}

#[test]
fn oracle_optimum_satisfies_every_row() {
    let mut rng = seeded(89);
    let oracle = grid_oracle(6, 6, 10);
    let net = oracle.network_arc();
    let mut checked = 0;
    for _ in 0..200 {
        let inst = random_instance(
            &mut rng,
            &net,
            &oracle,
            &InstanceParams {
                max_trips: 3,
                wait: 600,
                detour_bp: 5_000,
                onboard_fraction: 0.4,
                max_onboard: None,
            },
        );
        if inst.point_count() > 7 {
            continue;
        }
        let (bf, _) = brute_force::best_schedule(&oracle, &inst).unwrap();
        let Some(best) = bf else { continue };
        checked += 1;
        let model = build_model(&oracle, &inst);
        // encode the schedule as (y, B, L)
        let n = model.node_count;
        let node_of = |wp| {
            model
                .node_waypoints
                .iter()
                .position(|w| w.as_ref() == Some(&wp))
                .expect("waypoint in model")
        };
        let mut order = vec![0usize];
        order.extend(best.sequence.iter().map(|&wp| node_of(wp)));
        let mut y = vec![vec![false; n]; n];
        let mut b = vec![0; n];
        let mut at: Cost = 0;
        for pair in order.windows(2) {
            y[pair[0]][pair[1]] = true;
            at += model.d[pair[0]][pair[1]];
            b[pair[1]] = at;
        }
        let l: Vec<Cost> = (model.k + model.n + 1..n)
            .map(|dr| b[dr] - b[dr - model.n])
            .collect();
        assert!(
            model.check_solution(&y, &b, &l).unwrap(),
            "optimal schedule violates an emitted row"
        );
        // tightest-M: every M equals the validity bound exactly
        for i in 0..n {
            for j in 0..n {
                let expect = (model.windows[i].1 as i128 + model.d[i][j] as i128
                    - model.windows[j].0 as i128)
                    .max(0) as Cost;
                assert_eq!(model.big_m[i][j], expect);
            }
        }
    }
    assert!(checked > 80, "only {checked} feasible instances drawn");
}

#[test]
fn variable_and_row_counts_follow_the_shape() {
    let oracle = grid_oracle(5, 5, 10);
    let net = oracle.network_arc();
    let mut rng = seeded(97);

    // one new trip only: k = 0, n = 1, |N| = 3, so y is 3x3 = 9 variables
    let inst = random_instance(
        &mut rng,
        &net,
        &oracle,
        &InstanceParams { max_trips: 1, wait: 600, detour_bp: 2_000, onboard_fraction: 0.0, max_onboard: None },
    );
    assert_eq!(inst.onboard.len(), 0);
    assert!(inst.new_trip.is_some());
    let model = build_model(&oracle, &inst);
    assert_eq!((model.k, model.n, model.node_count), (0, 1, 3));
    let y_vars = model.node_count * model.node_count;
    assert_eq!(y_vars, 9);
    let expected_rows = |count: usize, k: usize, n: usize| {
        (count - 1)       // one predecessor per non-start node
            + 1           // one successor of the start
            + 1           // clock starts at zero
            + count * count // linearized timing rows
            + n           // ride-time definitions
            + (n)         // waiting caps (pickups)
            + k           // onboard ride caps
            + 2 * n       // ride-time bounds
    };
    assert_eq!(model.rows.len(), expected_rows(3, 0, 1));

    // one onboard dropoff plus one pending trip: k = 1, n = 1, |N| = 4
    let mut inst2 = ridesharing::instance::ReschedulingInstance::at(0);
    inst2.onboard.push(ridesharing::instance::OnboardTrip {
        trip: ridesharing::trips::TripId(0),
        dropoff: 7,
        ride_budget: 500,
    });
    inst2.new_trip = inst.new_trip;
    let model2 = build_model(&oracle, &inst2);
    assert_eq!((model2.k, model2.n, model2.node_count), (1, 1, 4));
    assert_eq!(model2.objective.len(), 16);
    assert_eq!(model2.variable_count(), 16 + 4 + 1);
    assert_eq!(model2.rows.len(), expected_rows(4, 1, 1));
}

#[test]
fn emitted_lp_matches_golden_file_and_round_trips() {
    let oracle = grid_oracle(3, 3, 10);
    let mut inst = ridesharing::instance::ReschedulingInstance::at(0);
    inst.new_trip = Some(request(1, 1, 8, 600, 2_000));
    let model = build_model(&oracle, &inst);
    let text = emit_lp(&model).unwrap();
    let golden = include_str!("fixtures/single_trip.lp");
    assert_eq!(text, golden, "emitted LP text drifted from the golden file");
    let parsed = parse_lp(&text).unwrap();
    assert_eq!(parsed, model.to_lp_file());
    assert_eq!(emit_lp_file(&parsed), text, "re-emission is not byte-identical");
}

#[test]
fn precedence_violations_fail_check_solution() {
    let oracle = grid_oracle(5, 5, 10);
    let mut inst = ridesharing::instance::ReschedulingInstance::at(0);
    inst.new_trip = Some(request(1, 3, 23, 600, 2_000));
    let model = build_model(&oracle, &inst);
    // dropoff (node 2) before pickup (node 1)
    let mut y = vec![vec![false; 3]; 3];
    y[0][2] = true;
    y[2][1] = true;
    let d02 = model.d[0][2];
    let d21 = model.d[2][1];
    let b = vec![0, d02 + d21, d02];
    let l = vec![0]; // ride "ends" before it starts
    assert!(!model.check_solution(&y, &b, &l).unwrap());
}

#[test]
fn unconstrained_model_matches_held_karp() {
    let mut rng = seeded(101);
    let oracle = grid_oracle(6, 6, 10);
    let net = oracle.network_arc();
    for _ in 0..60 {
        let mut inst = random_instance(
            &mut rng,
            &net,
            &oracle,
            &InstanceParams { max_trips: 3, wait: 0, detour_bp: 0, onboard_fraction: 0.5, max_onboard: None },
        );
        for t in &mut inst.onboard {
            t.ride_budget = INFINITE;
        }
        for t in &mut inst.waiting {
            t.wait_budget = INFINITE;
            t.ride_budget = INFINITE;
        }
        if let Some(t) = &mut inst.new_trip {
            t.max_wait = INFINITE;
            t.detour_bp = u32::MAX;
        }
        if inst.point_count() > 7 {
            continue;
        }
        let model = build_model(&oracle, &inst);
        let hk = held_karp_unconstrained(&oracle, &inst);
        assert_eq!(model.solve_exact().map(|(c, _)| c), hk);
    }
}

#[test]
fn model_nodes_partition_by_kind() {
    let mut rng = seeded(103);
    let oracle = grid_oracle(6, 6, 10);
    let net = oracle.network_arc();
    let inst = random_instance(
        &mut rng,
        &net,
        &oracle,
        &InstanceParams { max_trips: 4, wait: 600, detour_bp: 3_000, onboard_fraction: 0.5, max_onboard: None },
    );
    let model = build_model(&oracle, &inst);
    for (i, wp) in model.node_waypoints.iter().enumerate() {
        match wp {
            None => assert_eq!(i, 0),
            Some(w) if i >= 1 && i <= model.k => assert_eq!(w.kind, WaypointKind::Dropoff),
            Some(w) if i <= model.k + model.n => {
                assert_eq!(w.kind, WaypointKind::Pickup);
                // matching dropoff sits n places later
                let d = model.node_waypoints[i + model.n].unwrap();
                assert_eq!(d.kind, WaypointKind::Dropoff);
                assert_eq!(d.trip, w.trip);
            }
            Some(w) => assert_eq!(w.kind, WaypointKind::Dropoff),
        }
    }
}
