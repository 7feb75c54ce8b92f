//! One vehicle's rescheduling problem: the input shared by the exhaustive,
//! branch-and-bound, MIP, and kinetic-tree schedulers.
//!
//! An instance snapshots a vehicle at a moment in time: where it is, which
//! passengers are on board (only their dropoffs remain, with remaining ride
//! budgets), which accepted trips still wait for pickup (with remaining wait
//! budgets and full ride budgets), and optionally one brand-new request to
//! absorb. All budgets are *remaining* amounts measured from the instance's
//! start position.

use thiserror::Error;

use crate::cost::{sub_budget, Cost, INFINITE};
use crate::roadnet::{DistanceOracle, VertexId};
use crate::trips::{TripId, TripRequest, Waypoint, WaypointKind};

/// A passenger on board: only the dropoff remains to be scheduled.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OnboardTrip {
    pub trip: TripId,
    pub dropoff: VertexId,
    /// Remaining ride time before the service constraint breaks.
    pub ride_budget: Cost,
}

/// An accepted trip not yet picked up: pickup and dropoff both pending.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WaitingTrip {
    pub trip: TripId,
    pub pickup: VertexId,
    pub dropoff: VertexId,
    /// Remaining waiting time before the pickup deadline breaks.
    pub wait_budget: Cost,
    /// Full ride budget; consumption starts at the pickup.
    pub ride_budget: Cost,
}

/// The rescheduling input for one vehicle.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ReschedulingInstance {
    /// Vehicle position: distances to any vertex `x` are
    /// `start_extra + d(start, x)`. `start_extra` is zero when the vehicle
    /// sits exactly on a vertex and covers mid-edge positions otherwise.
    pub start: VertexId,
    pub start_extra: Cost,
    pub onboard: Vec<OnboardTrip>,
    pub waiting: Vec<WaitingTrip>,
    /// A new request to absorb; its waiting budget is the full `max_wait`
    /// because the request point coincides with the vehicle's position.
    pub new_trip: Option<TripRequest>,
    /// Seat limit: at most this many passengers on board at once.
    pub max_onboard: Option<usize>,
}

#[derive(Debug, Error)]
pub enum InstanceError {
    #[error("instance has {points} waypoints, exhaustive search is capped at {cap}")]
    TooManyWaypoints { points: usize, cap: usize },
    #[error("budget must be nonnegative")]
    NegativeBudget,
}

impl ReschedulingInstance {
    pub fn at(start: VertexId) -> Self {
        ReschedulingInstance { start, ..Default::default() }
    }

    /// The waypoints still to be scheduled, in deterministic
    /// `(kind, trip id)` order: every onboard dropoff, then pickup+dropoff
    /// for every waiting trip and the new request.
    pub fn pending_waypoints(&self, oracle: &DistanceOracle) -> Vec<PendingPoint> {
        let mut points = Vec::new();
        for ob in &self.onboard {
            points.push(PendingPoint {
                waypoint: Waypoint::dropoff(ob.trip, ob.dropoff),
                budget: ob.ride_budget,
                anchored_at_start: true,
            });
        }
        for wt in self.waiting_with_new(oracle) {
            points.push(PendingPoint {
                waypoint: Waypoint::pickup(wt.trip, wt.pickup),
                budget: wt.wait_budget,
                anchored_at_start: true,
            });
            points.push(PendingPoint {
                waypoint: Waypoint::dropoff(wt.trip, wt.dropoff),
                budget: wt.ride_budget,
                anchored_at_start: false,
            });
        }
        points.sort_by_key(|p| (p.waypoint.kind, p.waypoint.trip));
        points
    }

    /// Waiting trips plus the new request normalized into the same shape.
    pub fn waiting_with_new(&self, oracle: &DistanceOracle) -> Vec<WaitingTrip> {
        let mut out = self.waiting.clone();
        if let Some(req) = &self.new_trip {
            out.push(WaitingTrip {
                trip: req.id,
                pickup: req.source,
                dropoff: req.destination,
                wait_budget: req.max_wait,
                ride_budget: req.service_budget(oracle),
            });
        }
        out.sort_by_key(|w| w.trip);
        out
    }

    pub fn point_count(&self) -> usize {
        self.onboard.len()
            + 2 * self.waiting.len()
            + if self.new_trip.is_some() { 2 } else { 0 }
    }
}

/// A waypoint awaiting scheduling, with the budget of the constraint it
/// completes. `anchored_at_start` tells whether the budget is consumed from
/// the instance start (pickups, onboard dropoffs) or from the trip's own
/// pickup (dropoffs of waiting trips).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PendingPoint {
    pub waypoint: Waypoint,
    pub budget: Cost,
    pub anchored_at_start: bool,
}

/// Incremental feasibility walk over a candidate sequence.
///
/// Budgets only tighten as distance accumulates, so a prefix that violates
/// one can be pruned: no completion recovers. Every scheduler routes its
/// feasibility decisions through this one walker.
#[derive(Debug, Clone)]
pub struct SequenceWalk<'a> {
    inst: &'a ReschedulingInstance,
    points: &'a [PendingPoint],
    /// distance from the start position along the sequence so far
    pub dist: Cost,
    at: VertexId,
    onboard_count: usize,
    /// pickup distance per waiting trip, filled as pickups are passed
    pickup_dist: Vec<Option<Cost>>,
    used: Vec<bool>,
}

impl<'a> SequenceWalk<'a> {
    pub fn new(inst: &'a ReschedulingInstance, points: &'a [PendingPoint]) -> Self {
        SequenceWalk {
            inst,
            points,
            dist: inst.start_extra,
            at: inst.start,
            onboard_count: inst.onboard.len(),
            pickup_dist: vec![None; points.len()],
            used: vec![false; points.len()],
        }
    }

    pub fn at_vertex(&self) -> VertexId {
        self.at
    }

    pub fn onboard_count(&self) -> usize {
        self.onboard_count
    }

    pub fn is_used(&self, idx: usize) -> bool {
        self.used[idx]
    }

    /// Tries to extend the walk with point `idx`. Returns `false` (leaving
    /// the walk untouched) when precedence, a budget, or the seat limit
    /// rejects the extension.
    pub fn try_step(&mut self, oracle: &DistanceOracle, idx: usize) -> bool {
        let p = &self.points[idx];
        debug_assert!(!self.used[idx]);
        match p.waypoint.kind {
            WaypointKind::Pickup => {
                if let Some(cap) = self.inst.max_onboard {
                    if self.onboard_count >= cap {
                        return false;
                    }
                }
            }
            WaypointKind::Dropoff => {
                if !p.anchored_at_start && self.matching_pickup_dist(p.waypoint.trip).is_none() {
                    return false; // pickup not yet scheduled
                }
            }
            WaypointKind::Request => {}
        }
        let step = if p.waypoint.vertex == self.at {
            0
        } else {
            oracle.distance(self.at, p.waypoint.vertex)
        };
        if step == INFINITE {
            return false;
        }
        let new_dist = self.dist + step;
        let consumed = if p.anchored_at_start {
            new_dist
        } else {
            new_dist - self.matching_pickup_dist(p.waypoint.trip).unwrap()
        };
        if sub_budget(p.budget, consumed).is_none() {
            return false;
        }
        self.dist = new_dist;
        self.at = p.waypoint.vertex;
        self.used[idx] = true;
        match p.waypoint.kind {
            WaypointKind::Pickup => {
                self.onboard_count += 1;
                self.pickup_dist[idx] = Some(new_dist);
            }
            WaypointKind::Dropoff => self.onboard_count -= 1,
            WaypointKind::Request => {}
        }
        true
    }

    fn matching_pickup_dist(&self, trip: TripId) -> Option<Cost> {
        self.points.iter().enumerate().find_map(|(i, p)| {
            if p.waypoint.kind == WaypointKind::Pickup && p.waypoint.trip == trip {
                self.pickup_dist[i]
            } else {
                None
            }
        })
    }
}

/// Checks a complete sequence over `inst`'s pending waypoints: all points
/// used exactly once, every budget respected. Returns its total cost.
pub fn sequence_cost(
    oracle: &DistanceOracle,
    inst: &ReschedulingInstance,
    sequence: &[Waypoint],
) -> Option<Cost> {
    let points = inst.pending_waypoints(oracle);
    if sequence.len() != points.len() {
        return None;
    }
    let mut walk = SequenceWalk::new(inst, &points);
    for wp in sequence {
        let idx = points.iter().position(|p| p.waypoint == *wp)?;
        if walk.is_used(idx) || !walk.try_step(oracle, idx) {
            return None;
        }
    }
    Some(walk.dist)
}
