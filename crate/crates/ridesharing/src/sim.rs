//! Event-driven dispatch simulator.
//!
//! Replays a time-sorted trip trace against a fleet moving on the road
//! network at a constant speed (14 m/s by default). Edge weights are travel
//! times in deciseconds, so simulated time and traveled distance advance at
//! the same rate and all motion arithmetic stays in integers.
//!
//! Vehicles follow their committed route while they have work and otherwise
//! cruise: at each intersection an idle vehicle picks a random next segment
//! (never reversing unless the vertex is a dead end), from a per-vehicle
//! RNG stream so runs are reproducible from one seed. Each incoming request
//! is offered to the vehicles the grid index finds within the waiting-time
//! radius; every candidate prices the insertion with the configured
//! scheduler, the cheapest bid wins (ties to the lowest vehicle id), the
//! winner commits and everyone else discards. Requests nobody can serve are
//! dropped and counted.
//!
//! The per-request log records enough to audit the run afterwards: a served
//! passenger's realized waiting time never exceeds the waiting limit and
//! the realized ride never exceeds the detour allowance.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, VecDeque};
use std::fmt::Write as _;
use std::sync::Arc;
use std::time::Instant;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::bnb;
use crate::brute_force;
use crate::cost::{service_budget, Cost, INFINITE};
use crate::dispatch::{candidates, select_winner, wait_radius_m, Bid, GridIndex, VehicleId};
use crate::instance::{OnboardTrip, ReschedulingInstance, WaitingTrip};
use crate::ktree::{Invalidation, KineticTree, TreeCandidate, TreeConfig, TreeMode};
use crate::roadnet::{DistanceOracle, RoadNetwork, VertexId};
use crate::trips::{TripId, TripRequest, Waypoint, WaypointKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SchedulerKind {
    BruteForce,
    BranchAndBound,
    Tree,
    TreeSlack,
    TreeHotspot,
}

impl SchedulerKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "bf" => Some(SchedulerKind::BruteForce),
            "bnb" => Some(SchedulerKind::BranchAndBound),
            "tree" => Some(SchedulerKind::Tree),
            "tree_slack" => Some(SchedulerKind::TreeSlack),
            "tree_hotspot" => Some(SchedulerKind::TreeHotspot),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            SchedulerKind::BruteForce => "bf",
            SchedulerKind::BranchAndBound => "bnb",
            SchedulerKind::Tree => "tree",
            SchedulerKind::TreeSlack => "tree_slack",
            SchedulerKind::TreeHotspot => "tree_hotspot",
        }
    }
}

#[derive(Debug, Clone)]
pub struct SimConfig {
    /// Constant vehicle speed, meters per second.
    pub speed_mps: f64,
    /// Seat limit per vehicle; `None` is unlimited.
    pub capacity: Option<usize>,
    /// Uniform waiting-time limit, deciseconds.
    pub max_wait: Cost,
    /// Uniform detour allowance, basis points.
    pub detour_bp: u32,
    pub fleet_size: usize,
    pub scheduler: SchedulerKind,
    pub invalidation: Invalidation,
    /// Hotspot merge radius (deciseconds), used by `TreeHotspot`.
    pub theta: Cost,
    pub seed: u64,
    /// Vehicles decline requests once their pending waypoints would exceed
    /// this, keeping every scheduler inside the exhaustive-search cap.
    pub max_pending_points: usize,
    /// Record wall-clock scheduling times (makes outputs nondeterministic).
    pub collect_timings: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            speed_mps: 14.0,
            capacity: Some(4),
            max_wait: 6_000,  // 10 minutes
            detour_bp: 2_000, // 20%
            fleet_size: 10_000,
            scheduler: SchedulerKind::TreeSlack,
            invalidation: Invalidation::Lazy,
            theta: 300,
            seed: 1,
            max_pending_points: 8,
            collect_timings: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TraceRequest {
    pub time: Cost,
    pub trip: TripId,
    pub source: VertexId,
    pub dest: VertexId,
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("trace line {line}: {message}")]
    Trace { line: usize, message: String },
    #[error("trace references vertex {vertex} but the network has {count}")]
    VertexMismatch { vertex: VertexId, count: u32 },
    #[error("trace is not sorted by request time at line {line}")]
    Unsorted { line: usize },
    #[error("fleet size must be positive")]
    EmptyFleet,
}

/// Generates a reproducible synthetic trace. `clustering` is the fraction
/// of requests whose source collapses onto one seeded hotspot vertex
/// (1.0 puts every source there), which is the stress pattern hotspot
/// clustering exists for. Inter-arrival gaps are uniform in
/// `[1, 2*mean_gap_ds]`.
pub fn generate_trace(
    seed: u64,
    net: &RoadNetwork,
    n_requests: usize,
    clustering: f64,
    mean_gap_ds: Cost,
) -> Vec<TraceRequest> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let v = net.vertex_count();
    let hotspot = rng.gen_range(0..v);
    let mut t = 0;
    let mut out = Vec::with_capacity(n_requests);
    for i in 0..n_requests {
        t += rng.gen_range(1..=(2 * mean_gap_ds).max(2));
        let source = if rng.gen_bool(clustering.clamp(0.0, 1.0)) {
            hotspot
        } else {
            rng.gen_range(0..v)
        };
        let mut dest = rng.gen_range(0..v);
        while dest == source {
            dest = rng.gen_range(0..v);
        }
        out.push(TraceRequest { time: t, trip: TripId(i as u32), source, dest });
    }
    out
}

/// Trace file format: one line per request, `time_ds trip_id source dest`,
/// sorted by time.
pub fn trace_to_text(trace: &[TraceRequest]) -> String {
    let mut out = String::new();
    for r in trace {
        let _ = writeln!(out, "{} {} {} {}", r.time, r.trip.0, r.source, r.dest);
    }
    out
}

pub fn parse_trace(text: &str) -> Result<Vec<TraceRequest>, SimError> {
    let mut out = Vec::new();
    let mut last = 0;
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let mut it = line.split_whitespace();
        let mut field = |what: &str| -> Result<u64, SimError> {
            it.next()
                .ok_or_else(|| SimError::Trace { line: line_no, message: format!("missing {what}") })?
                .parse()
                .map_err(|_| SimError::Trace { line: line_no, message: format!("invalid {what}") })
        };
        let time = field("time")?;
        let trip = field("trip id")? as u32;
        let source = field("source")? as VertexId;
        let dest = field("destination")? as VertexId;
        if time < last {
            return Err(SimError::Unsorted { line: line_no });
        }
        last = time;
        out.push(TraceRequest { time, trip: TripId(trip), source, dest });
    }
    Ok(out)
}

/// Outcome of one request, enough to audit the whole run afterwards.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RequestRecord {
    pub trip: TripId,
    pub time: Cost,
    pub source: VertexId,
    pub dest: VertexId,
    pub winner: Option<VehicleId>,
    pub bid_cost: Option<Cost>,
    pub pickup_time: Option<Cost>,
    pub dropoff_time: Option<Cost>,
}

#[derive(Debug, Clone, Default)]
pub struct Metrics {
    pub submitted: usize,
    pub served: usize,
    pub rejected: usize,
    pub served_fraction: f64,
    pub mean_wait_ds: f64,
    pub mean_ride_ds: f64,
    /// Time-averaged onboard passengers per vehicle.
    pub mean_occupancy: f64,
    pub max_onboard: usize,
    /// Mean wall-clock milliseconds per dispatch decision (timings only).
    pub acrt_ms: Option<f64>,
    /// Mean wall-clock milliseconds per vehicle evaluation, bucketed by the
    /// vehicle's active trip count (timings only).
    pub art_by_active_ms: Vec<(usize, f64, usize)>,
}

#[derive(Debug, Clone)]
pub struct SimReport {
    pub metrics: Metrics,
    pub records: Vec<RequestRecord>,
    /// Constraint violations found by the replay audit; empty on a good run.
    pub violations: Vec<String>,
    /// Wall-clock milliseconds per dispatch decision, in request order
    /// (empty unless timings were collected).
    pub dispatch_times_ms: Vec<f64>,
}

enum VehicleSched {
    Tree(Box<KineticTree>),
    Exact { waiting: Vec<TripRequest>, onboard: Vec<(TripRequest, Cost, Cost)> },
}

struct Vehicle {
    /// Segment target vertex (current position when `arrive <= now`).
    at: VertexId,
    prev: VertexId,
    arrive: Cost,
    /// Road vertices still ahead on the current leg, ending at the next
    /// waypoint's vertex.
    leg: VecDeque<VertexId>,
    route: VecDeque<Waypoint>,
    sched: VehicleSched,
    origin_time: Cost,
    onboard_now: usize,
    rng: ChaCha8Rng,
    parked: bool,
    /// An Arrive event for this vehicle is already queued.
    event_queued: bool,
}

impl Vehicle {
    fn pending_points(&self) -> usize {
        match &self.sched {
            VehicleSched::Tree(t) => {
                let snapshot_onboard = t.onboard_count();
                let active = t.active_trip_count();
                snapshot_onboard + 2 * (active - snapshot_onboard)
            }
            VehicleSched::Exact { waiting, onboard } => onboard.len() + 2 * waiting.len(),
        }
    }
}

#[derive(PartialEq, Eq, PartialOrd, Ord)]
struct EventKey {
    time: Cost,
    priority: u8,
    seq: u64,
}

enum EventKind {
    Arrive(VehicleId),
    Request(usize),
}

/// Runs the simulation; deterministic for a fixed seed as long as timing
/// collection is off.
pub fn run(config: &SimConfig, net: Arc<RoadNetwork>, trace: &[TraceRequest]) -> Result<SimReport, SimError> {
    if config.fleet_size == 0 {
        return Err(SimError::EmptyFleet);
    }
    for r in trace {
        for &v in &[r.source, r.dest] {
            if v >= net.vertex_count() {
                return Err(SimError::VertexMismatch { vertex: v, count: net.vertex_count() });
            }
        }
        if r.source == r.dest {
            return Err(SimError::Trace {
                line: 0,
                message: format!("trip {} has identical source and destination", r.trip),
            });
        }
    }
    let oracle = DistanceOracle::new(Arc::clone(&net));
    let mut sim = Sim::new(config, &oracle, net, trace);
    sim.run();
    Ok(sim.finish())
}

struct Sim<'a> {
    config: &'a SimConfig,
    oracle: &'a DistanceOracle,
    net: Arc<RoadNetwork>,
    trace: &'a [TraceRequest],
    vehicles: Vec<Vehicle>,
    index: Option<GridIndex>,
    events: BinaryHeap<Reverse<(EventKey, usize)>>,
    payloads: Vec<EventKind>,
    seq: u64,
    records: Vec<RequestRecord>,
    record_of: std::collections::HashMap<TripId, usize>,
    requests_left: usize,
    active_routes: usize,
    // occupancy accounting
    onboard_total: usize,
    occupancy_integral: f64,
    last_event_time: Cost,
    end_time: Cost,
    max_onboard: usize,
    // timings
    dispatch_ms: Vec<f64>,
    art_samples: std::collections::BTreeMap<usize, (f64, usize)>,
}

impl<'a> Sim<'a> {
    fn new(
        config: &'a SimConfig,
        oracle: &'a DistanceOracle,
        net: Arc<RoadNetwork>,
        trace: &'a [TraceRequest],
    ) -> Self {
        let mut master = ChaCha8Rng::seed_from_u64(config.seed);
        let tree_mode = match config.scheduler {
            SchedulerKind::Tree => TreeMode::Basic,
            SchedulerKind::TreeSlack => TreeMode::Slack,
            SchedulerKind::TreeHotspot => TreeMode::Hotspot { theta: config.theta },
            _ => TreeMode::Slack,
        };
        let mut vehicles = Vec::with_capacity(config.fleet_size);
        for vid in 0..config.fleet_size {
            let start = master.gen_range(0..net.vertex_count());
            let sched = match config.scheduler {
                SchedulerKind::BruteForce | SchedulerKind::BranchAndBound => {
                    VehicleSched::Exact { waiting: Vec::new(), onboard: Vec::new() }
                }
                _ => VehicleSched::Tree(Box::new(KineticTree::new(
                    start,
                    TreeConfig {
                        mode: tree_mode,
                        invalidation: config.invalidation,
                        max_onboard: config.capacity,
                        ..TreeConfig::default()
                    },
                ))),
            };
            vehicles.push(Vehicle {
                at: start,
                prev: start,
                arrive: 0,
                leg: VecDeque::new(),
                route: VecDeque::new(),
                sched,
                origin_time: 0,
                onboard_now: 0,
                rng: ChaCha8Rng::seed_from_u64(config.seed ^ (0x9e3779b97f4a7c15u64.wrapping_mul(vid as u64 + 1))),
                parked: false,
                event_queued: false,
            });
        }
        let index = net.coords().map(|coords| {
            let cell = (wait_radius_m(config.max_wait, config.speed_mps) / 2.0).max(1.0);
            let mut idx = GridIndex::new(coords, cell, config.fleet_size);
            for (vid, v) in vehicles.iter().enumerate() {
                let (x, y) = coords[v.at as usize];
                idx.update(vid as VehicleId, x, y);
            }
            idx
        });
        let mut sim = Sim {
            config,
            oracle,
            net,
            trace,
            vehicles,
            index,
            events: BinaryHeap::new(),
            payloads: Vec::new(),
            seq: 0,
            records: Vec::new(),
            record_of: std::collections::HashMap::new(),
            requests_left: trace.len(),
            active_routes: 0,
            onboard_total: 0,
            occupancy_integral: 0.0,
            last_event_time: 0,
            end_time: 0,
            max_onboard: 0,
            dispatch_ms: Vec::new(),
            art_samples: std::collections::BTreeMap::new(),
        };
        for (i, r) in trace.iter().enumerate() {
            sim.push(r.time, 0, EventKind::Request(i));
        }
        for vid in 0..sim.vehicles.len() {
            sim.vehicles[vid].event_queued = true;
            sim.push(0, 1, EventKind::Arrive(vid as VehicleId));
        }
        sim
    }

    fn push(&mut self, time: Cost, priority: u8, kind: EventKind) {
        let idx = self.payloads.len();
        self.payloads.push(kind);
        self.seq += 1;
        self.events.push(Reverse((EventKey { time, priority, seq: self.seq }, idx)));
    }

    fn run(&mut self) {
        while let Some(Reverse((key, idx))) = self.events.pop() {
            let t = key.time;
            self.tick_occupancy(t);
            match self.payloads[idx] {
                EventKind::Arrive(vid) => self.handle_arrive(vid, t),
                EventKind::Request(i) => self.handle_request(i, t),
            }
        }
    }

    fn tick_occupancy(&mut self, t: Cost) {
        if t > self.last_event_time {
            self.occupancy_integral += self.onboard_total as f64 * (t - self.last_event_time) as f64;
            self.last_event_time = t;
            self.end_time = t;
        }
    }

    fn update_index(&mut self, vid: VehicleId) {
        if let (Some(index), Some(coords)) = (self.index.as_mut(), self.net.coords()) {
            let (x, y) = coords[self.vehicles[vid as usize].at as usize];
            index.update(vid, x, y);
        }
    }

    fn handle_arrive(&mut self, vid: VehicleId, t: Cost) {
        self.vehicles[vid as usize].event_queued = false;
        self.update_index(vid);
        // consume any waypoints sitting at this vertex
        loop {
            let v = &self.vehicles[vid as usize];
            if v.arrive > t || !v.leg.is_empty() {
                break;
            }
            match v.route.front() {
                Some(wp) if wp.vertex == v.at => {
                    let wp = *wp;
                    self.process_waypoint(vid, wp, t);
                }
                _ => break,
            }
        }
        let v = &mut self.vehicles[vid as usize];
        if let Some(&next) = v.leg.front() {
            // keep driving the current leg
            v.leg.pop_front();
            let w = edge_cost(&self.net, v.at, next);
            v.prev = v.at;
            v.at = next;
            v.arrive = t + w;
            v.event_queued = true;
            self.push(t + w, 1, EventKind::Arrive(vid));
            return;
        }
        if let Some(wp) = v.route.front() {
            // start the next leg
            let target = wp.vertex;
            let (path, _) = self
                .oracle
                .path(v.at, target)
                .expect("committed waypoint is reachable");
            v.leg = path.iter().copied().skip(1).collect();
            let next = v.leg.pop_front().expect("leg has at least one hop");
            let w = edge_cost(&self.net, v.at, next);
            v.prev = v.at;
            v.at = next;
            v.arrive = t + w;
            v.event_queued = true;
            self.push(t + w, 1, EventKind::Arrive(vid));
            return;
        }
        // idle: cruise while there may still be work, otherwise park
        let work = self.requests_left > 0 || self.active_routes > 0;
        if !work {
            v.parked = true;
            return;
        }
        let neighbors = self.net.neighbors(v.at);
        if neighbors.is_empty() {
            v.parked = true;
            return;
        }
        let choices: Vec<(VertexId, Cost)> = neighbors
            .iter()
            .copied()
            .filter(|&(to, _)| to != v.prev || neighbors.len() == 1)
            .collect();
        let &(next, w) = choices
            .get(v.rng.gen_range(0..choices.len()))
            .unwrap_or(&neighbors[0]);
        v.prev = v.at;
        v.at = next;
        v.arrive = t + w;
        v.event_queued = true;
        self.push(t + w, 1, EventKind::Arrive(vid));
    }

    fn process_waypoint(&mut self, vid: VehicleId, wp: Waypoint, t: Cost) {
        let v = &mut self.vehicles[vid as usize];
        v.route.pop_front();
        match &mut v.sched {
            VehicleSched::Tree(tree) => {
                tree.advance(wp).expect("route mirrors the selected schedule");
                v.origin_time = t;
            }
            VehicleSched::Exact { waiting, onboard } => match wp.kind {
                WaypointKind::Pickup => {
                    let i = waiting.iter().position(|r| r.id == wp.trip).expect("trip waits");
                    let req = waiting.remove(i);
                    let budget = req.service_budget(self.oracle);
                    onboard.push((req, t, budget));
                }
                WaypointKind::Dropoff => {
                    let i = onboard.iter().position(|(r, _, _)| r.id == wp.trip).expect("trip onboard");
                    onboard.remove(i);
                }
                WaypointKind::Request => {}
            },
        }
        match wp.kind {
            WaypointKind::Pickup => {
                v.onboard_now += 1;
                self.onboard_total += 1;
                self.max_onboard = self.max_onboard.max(v.onboard_now);
                let idx = self.record_of[&wp.trip];
                self.records[idx].pickup_time = Some(t);
            }
            WaypointKind::Dropoff => {
                v.onboard_now -= 1;
                self.onboard_total -= 1;
                let idx = self.record_of[&wp.trip];
                self.records[idx].dropoff_time = Some(t);
            }
            WaypointKind::Request => {}
        }
        if self.vehicles[vid as usize].route.is_empty() {
            self.active_routes -= 1;
        }
    }

    fn handle_request(&mut self, trace_idx: usize, t: Cost) {
        self.requests_left -= 1;
        let r = self.trace[trace_idx];
        let req = TripRequest {
            id: r.trip,
            source: r.source,
            destination: r.dest,
            request_time: t,
            max_wait: self.config.max_wait,
            detour_bp: self.config.detour_bp,
        };
        let started = self.config.collect_timings.then(Instant::now);
        let margin = self.net.max_edge_weight() as f64 / 10.0 * self.config.speed_mps
            + self.index.as_ref().map_or(0.0, |i| i.cell_size());
        let candidate_ids = candidates(
            self.index.as_ref(),
            self.net.coords(),
            req.source,
            self.config.max_wait,
            self.config.speed_mps,
            margin,
            self.vehicles.len(),
        );
        let mut bids: Vec<Bid> = Vec::new();
        let mut tree_offers: Vec<(VehicleId, TreeCandidate)> = Vec::new();
        let mut exact_offers: Vec<(VehicleId, Vec<Waypoint>)> = Vec::new();
        for vid in candidate_ids {
            let v = &mut self.vehicles[vid as usize];
            if let VehicleSched::Tree(tree) = &mut v.sched {
                tree.settle(); // lazy trees prune now, before the load check
            }
            if v.pending_points() + 2 > self.config.max_pending_points {
                continue;
            }
            let bid_started = self.config.collect_timings.then(Instant::now);
            let active = match &v.sched {
                VehicleSched::Tree(tree) => tree.active_trip_count(),
                VehicleSched::Exact { waiting, onboard } => waiting.len() + onboard.len(),
            };
            let extra = v.arrive.saturating_sub(t);
            let offer = match &mut v.sched {
                VehicleSched::Tree(tree) => {
                    let traveled = t.saturating_sub(v.origin_time);
                    match tree.try_insert_at(self.oracle, &req, v.at, extra, traveled) {
                        Ok(Some(cand)) => {
                            let cost = cand.best_cost;
                            tree_offers.push((vid, cand));
                            Some(cost)
                        }
                        Ok(None) | Err(_) => None,
                    }
                }
                VehicleSched::Exact { waiting, onboard } => {
                    let mut inst = ReschedulingInstance::at(v.at);
                    inst.start_extra = extra;
                    inst.max_onboard = self.config.capacity;
                    for (trip, picked_at, budget) in onboard.iter() {
                        inst.onboard.push(OnboardTrip {
                            trip: trip.id,
                            dropoff: trip.destination,
                            ride_budget: budget.saturating_sub(t - picked_at),
                        });
                    }
                    for trip in waiting.iter() {
                        inst.waiting.push(WaitingTrip {
                            trip: trip.id,
                            pickup: trip.source,
                            dropoff: trip.destination,
                            wait_budget: trip.max_wait.saturating_sub(t - trip.request_time),
                            ride_budget: trip.service_budget(self.oracle),
                        });
                    }
                    inst.new_trip = Some(req);
                    let result = match self.config.scheduler {
                        SchedulerKind::BruteForce => brute_force::best_schedule(self.oracle, &inst)
                            .map(|(best, _)| best),
                        _ => bnb::best_schedule(self.oracle, &inst).map(|(best, _)| best),
                    };
                    match result {
                        Ok(Some(outcome)) => {
                            let cost = outcome.cost;
                            exact_offers.push((vid, outcome.sequence));
                            Some(cost)
                        }
                        _ => None,
                    }
                }
            };
            if let Some(start) = bid_started {
                let ms = start.elapsed().as_secs_f64() * 1e3;
                let entry = self.art_samples.entry(active).or_insert((0.0, 0));
                entry.0 += ms;
                entry.1 += 1;
            }
            if let Some(cost) = offer {
                bids.push(Bid { vehicle: vid, cost });
            }
        }
        let winner = select_winner(&bids);
        let mut record = RequestRecord {
            trip: req.id,
            time: t,
            source: req.source,
            dest: req.destination,
            winner: None,
            bid_cost: None,
            pickup_time: None,
            dropoff_time: None,
        };
        if let Some(win) = winner {
            record.winner = Some(win.vehicle);
            record.bid_cost = Some(win.cost);
            let route_was_empty;
            {
                let v = &mut self.vehicles[win.vehicle as usize];
                route_was_empty = v.route.is_empty();
                match &mut v.sched {
                    VehicleSched::Tree(tree) => {
                        let (_, cand) = tree_offers
                            .into_iter()
                            .find(|(vid, _)| *vid == win.vehicle)
                            .expect("winning tree offer kept");
                        tree.commit(cand).expect("candidate built from current revision");
                        v.origin_time = t;
                        v.route = tree.selected_route().iter().copied().collect();
                    }
                    VehicleSched::Exact { waiting, .. } => {
                        let (_, seq) = exact_offers
                            .into_iter()
                            .find(|(vid, _)| *vid == win.vehicle)
                            .expect("winning exact offer kept");
                        waiting.push(req);
                        v.route = seq.into();
                    }
                }
                v.leg.clear();
            }
            if route_was_empty {
                self.active_routes += 1;
            }
            let v = &self.vehicles[win.vehicle as usize];
            if !v.event_queued {
                let v = &mut self.vehicles[win.vehicle as usize];
                v.parked = false;
                v.arrive = t;
                v.event_queued = true;
                self.push(t, 1, EventKind::Arrive(win.vehicle));
            }
        }
        self.record_of.insert(req.id, self.records.len());
        self.records.push(record);
        if let Some(start) = started {
            self.dispatch_ms.push(start.elapsed().as_secs_f64() * 1e3);
        }
    }

    fn finish(self) -> SimReport {
        let mut violations = Vec::new();
        let mut served = 0;
        let mut wait_sum = 0.0;
        let mut ride_sum = 0.0;
        for rec in &self.records {
            match (rec.winner, rec.pickup_time, rec.dropoff_time) {
                (Some(_), Some(p), Some(d)) => {
                    served += 1;
                    let wait = p - rec.time;
                    let ride = d - p;
                    wait_sum += wait as f64;
                    ride_sum += ride as f64;
                    if wait > self.config.max_wait {
                        violations.push(format!(
                            "{}: waited {wait} ds, limit {}",
                            rec.trip, self.config.max_wait
                        ));
                    }
                    let direct = self.oracle.distance(rec.source, rec.dest);
                    let limit = service_budget(direct, self.config.detour_bp);
                    if ride > limit {
                        violations.push(format!("{}: rode {ride} ds, limit {limit}", rec.trip));
                    }
                }
                (Some(_), _, _) => {
                    violations.push(format!("{}: assigned but never completed", rec.trip));
                }
                (None, _, _) => {}
            }
        }
        let rejected = self.records.len() - served;
        if let Some(cap) = self.config.capacity {
            if self.max_onboard > cap {
                violations.push(format!(
                    "{} passengers on board exceeds the capacity of {cap}",
                    self.max_onboard
                ));
            }
        }
        let duration = self.end_time.max(1) as f64;
        let metrics = Metrics {
            submitted: self.records.len(),
            served,
            rejected,
            served_fraction: if self.records.is_empty() {
                0.0
            } else {
                served as f64 / self.records.len() as f64
            },
            mean_wait_ds: if served > 0 { wait_sum / served as f64 } else { 0.0 },
            mean_ride_ds: if served > 0 { ride_sum / served as f64 } else { 0.0 },
            mean_occupancy: self.occupancy_integral / duration / self.vehicles.len() as f64,
            max_onboard: self.max_onboard,
            acrt_ms: if self.dispatch_ms.is_empty() {
                None
            } else {
                Some(self.dispatch_ms.iter().sum::<f64>() / self.dispatch_ms.len() as f64)
            },
            art_by_active_ms: self
                .art_samples
                .iter()
                .map(|(&active, &(sum, n))| (active, sum / n as f64, n))
                .collect(),
        };
        SimReport {
            metrics,
            records: self.records,
            violations,
            dispatch_times_ms: self.dispatch_ms,
        }
    }
}

fn edge_cost(net: &RoadNetwork, from: VertexId, to: VertexId) -> Cost {
    net.neighbors(from)
        .iter()
        .find(|&&(v, _)| v == to)
        .map(|&(_, w)| w)
        .unwrap_or(INFINITE)
}

/// Two-column `key,value` CSV of the deterministic metrics; timing rows are
/// appended only when they were collected.
pub fn metrics_csv(m: &Metrics) -> String {
    let mut out = String::from("metric,value\n");
    let _ = writeln!(out, "submitted,{}", m.submitted);
    let _ = writeln!(out, "served,{}", m.served);
    let _ = writeln!(out, "rejected,{}", m.rejected);
    let _ = writeln!(out, "served_fraction,{:.6}", m.served_fraction);
    let _ = writeln!(out, "mean_wait_ds,{:.2}", m.mean_wait_ds);
    let _ = writeln!(out, "mean_ride_ds,{:.2}", m.mean_ride_ds);
    let _ = writeln!(out, "mean_occupancy,{:.6}", m.mean_occupancy);
    let _ = writeln!(out, "max_onboard,{}", m.max_onboard);
    if let Some(acrt) = m.acrt_ms {
        let _ = writeln!(out, "acrt_ms,{acrt:.4}");
        for (active, mean, n) in &m.art_by_active_ms {
            let _ = writeln!(out, "art_ms_active_{active},{mean:.4}");
            let _ = writeln!(out, "art_samples_active_{active},{n}");
        }
    }
    out
}

/// Per-request CSV log.
pub fn requests_csv(records: &[RequestRecord]) -> String {
    let mut out =
        String::from("trip,request_time_ds,source,dest,winner,bid_cost_ds,pickup_time_ds,dropoff_time_ds\n");
    let opt = |v: Option<u64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in records {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.trip.0,
            r.time,
            r.source,
            r.dest,
            r.winner.map(|w| w.to_string()).unwrap_or_default(),
            opt(r.bid_cost),
            opt(r.pickup_time),
            opt(r.dropoff_time),
        );
    }
    out
}
