//! Trip requests, waypoints, schedules, and the validity rules every
//! scheduler in this crate has to agree on.
//!
//! A trip is requested at some vertex pair `(source, destination)` with a
//! maximum waiting time and a detour allowance. A schedule is an ordered
//! waypoint sequence; it is *valid* when, for every trip it contains,
//!
//! 1. the request point precedes the pickup, which precedes the dropoff,
//! 2. the travel time from the request point to the pickup is at most the
//!    trip's waiting limit, and
//! 3. the travel time from pickup to dropoff is at most the shortest ride
//!    time stretched by the detour allowance.
//!
//! All comparisons are exact integer comparisons in deciseconds, inclusive.

use std::fmt;

use thiserror::Error;

use crate::cost::{saturating_add, service_budget, Cost};
use crate::roadnet::{DistanceOracle, VertexId};

/// Identifier of a trip request.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TripId(pub u32);

impl fmt::Display for TripId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "t{}", self.0)
    }
}

/// A trip request `(source, destination, max wait, detour allowance)`.
///
/// `request_time` is when the request enters the system; `max_wait` and the
/// detour allowance are carried per trip even though the simulator uses a
/// uniform configuration, so individualized constraints cost nothing.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TripRequest {
    pub id: TripId,
    pub source: VertexId,
    pub destination: VertexId,
    /// Deciseconds since simulation start.
    pub request_time: Cost,
    /// Maximum waiting time, deciseconds.
    pub max_wait: Cost,
    /// Allowed extra ride time in basis points (2_000 = 20%).
    pub detour_bp: u32,
}

impl TripRequest {
    /// Maximum ride time from pickup to dropoff for this trip.
    pub fn service_budget(&self, oracle: &DistanceOracle) -> Cost {
        service_budget(oracle.distance(self.source, self.destination), self.detour_bp)
    }
}

/// What a waypoint marks. The derived order (`Request < Pickup < Dropoff`)
/// is part of the deterministic tie-break shared by all schedulers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum WaypointKind {
    Request,
    Pickup,
    Dropoff,
}

/// One point of a schedule: a request point (the vehicle's location when the
/// request arrived), a pickup, or a dropoff.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Waypoint {
    pub kind: WaypointKind,
    pub trip: TripId,
    pub vertex: VertexId,
}

impl Waypoint {
    pub fn request(trip: TripId, vertex: VertexId) -> Self {
        Waypoint { kind: WaypointKind::Request, trip, vertex }
    }
    pub fn pickup(trip: TripId, vertex: VertexId) -> Self {
        Waypoint { kind: WaypointKind::Pickup, trip, vertex }
    }
    pub fn dropoff(trip: TripId, vertex: VertexId) -> Self {
        Waypoint { kind: WaypointKind::Dropoff, trip, vertex }
    }
}

impl fmt::Display for Waypoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let k = match self.kind {
            WaypointKind::Request => "r",
            WaypointKind::Pickup => "s",
            WaypointKind::Dropoff => "e",
        };
        write!(f, "{}{}@{}", k, self.trip.0, self.vertex)
    }
}

/// An ordered waypoint sequence with a moving cursor.
///
/// `finished_prefix_len` splits the sequence into the executed part and the
/// part still ahead of the vehicle; the cursor `(current_time,
/// current_vertex)` sits between them.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Schedule {
    pub waypoints: Vec<Waypoint>,
    pub current_time: Cost,
    pub current_vertex: VertexId,
    pub finished_prefix_len: usize,
}

impl Schedule {
    pub fn new(waypoints: Vec<Waypoint>, current_time: Cost, current_vertex: VertexId) -> Self {
        Schedule { waypoints, current_time, current_vertex, finished_prefix_len: 0 }
    }

    pub fn unfinished(&self) -> &[Waypoint] {
        &self.waypoints[self.finished_prefix_len..]
    }
}

/// First reason a schedule fails validation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum Violation {
    #[error("{trip}: waypoints out of order (request before pickup before dropoff)")]
    PointOrder { trip: TripId },
    #[error("{trip}: waiting time {actual} exceeds limit {limit}")]
    Waiting { trip: TripId, actual: Cost, limit: Cost },
    #[error("{trip}: ride time {actual} exceeds limit {limit}")]
    Service { trip: TripId, actual: Cost, limit: Cost },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum SlackError {
    #[error("{trip} is not active at index {index}")]
    NotActive { trip: TripId, index: usize },
}

/// Sum of consecutive shortest distances between `points[from..=to]`.
///
/// Zero when `from == to`; [`crate::cost::INFINITE`] when any consecutive pair is
/// unreachable.
pub fn trip_cost(oracle: &DistanceOracle, points: &[Waypoint], from: usize, to: usize) -> Cost {
    assert!(from <= to && to < points.len(), "index out of range");
    let mut total = 0;
    for w in points[from..=to].windows(2) {
        total = saturating_add(total, oracle.distance(w[0].vertex, w[1].vertex));
    }
    total
}

/// Checks the three validity clauses for every trip of `trips` present in
/// the schedule. Returns the first violation instead of panicking; trips
/// listed but absent from the sequence are ignored.
pub fn validate_schedule(
    oracle: &DistanceOracle,
    schedule: &Schedule,
    trips: &[TripRequest],
) -> Result<(), Violation> {
    let points = &schedule.waypoints;
    let find = |kind, trip| points.iter().position(|w| w.kind == kind && w.trip == trip);
    for trip in trips {
        let r = find(WaypointKind::Request, trip.id);
        let s = find(WaypointKind::Pickup, trip.id);
        let e = find(WaypointKind::Dropoff, trip.id);
        let ordered = |a: Option<usize>, b: Option<usize>| match (a, b) {
            (Some(a), Some(b)) => a < b,
            _ => true,
        };
        if !(ordered(r, s) && ordered(s, e) && ordered(r, e)) {
            return Err(Violation::PointOrder { trip: trip.id });
        }
        if let (Some(r), Some(s)) = (r, s) {
            let wait = trip_cost(oracle, points, r, s);
            if wait > trip.max_wait {
                return Err(Violation::Waiting { trip: trip.id, actual: wait, limit: trip.max_wait });
            }
        }
        if let (Some(s), Some(e)) = (s, e) {
            let ride = trip_cost(oracle, points, s, e);
            let limit = trip.service_budget(oracle);
            if ride > limit {
                return Err(Violation::Service { trip: trip.id, actual: ride, limit });
            }
        }
    }
    Ok(())
}

/// Residual slack of `trip`'s active constraint at position `at_index`.
///
/// Before the pickup this is the waiting budget minus the distance already
/// scheduled since the request point; from the pickup to the dropoff it is
/// the ride budget minus the distance scheduled since the pickup.
pub fn remaining_slack(
    oracle: &DistanceOracle,
    schedule: &Schedule,
    trip: &TripRequest,
    at_index: usize,
) -> Result<Cost, SlackError> {
    let points = &schedule.waypoints;
    assert!(at_index < points.len(), "index out of range");
    let find = |kind| points.iter().position(|w| w.kind == kind && w.trip == trip.id);
    let not_active = SlackError::NotActive { trip: trip.id, index: at_index };
    let r = find(WaypointKind::Request);
    let s = find(WaypointKind::Pickup);
    let e = find(WaypointKind::Dropoff);
    if matches!(e, Some(e) if e < at_index) {
        return Err(not_active);
    }
    match s {
        Some(s) if s <= at_index => {
            let consumed = trip_cost(oracle, points, s, at_index);
            Ok(trip.service_budget(oracle).saturating_sub(consumed))
        }
        _ => {
            let r = r.filter(|&r| r <= at_index).ok_or(not_active)?;
            let consumed = trip_cost(oracle, points, r, at_index);
            Ok(trip.max_wait.saturating_sub(consumed))
        }
    }
}
