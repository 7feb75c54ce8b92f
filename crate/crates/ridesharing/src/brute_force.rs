//! Exhaustive exact scheduler.
//!
//! Enumerates every waypoint ordering that respects pickup-before-dropoff,
//! pruning prefixes that already blow a waiting, ride, or seat budget (a
//! violated prefix can never recover, so pruning keeps the search exact).
//! This is the ground truth every other scheduler is tested against, and the
//! "try all permutations" baseline of the comparison experiments.
//!
//! Ties on cost are broken toward the lexicographically smallest sequence of
//! `(kind, trip id)` pairs; all schedulers share this rule so their chosen
//! routes are comparable, not just their costs.

use crate::cost::Cost;
use crate::instance::{InstanceError, PendingPoint, ReschedulingInstance, SequenceWalk};
use crate::roadnet::DistanceOracle;
use crate::trips::Waypoint;

/// Hard cap on waypoints per instance; beyond it the factorial blowup makes
/// exhaustive search pointless and the call errors out instead.
pub const MAX_WAYPOINTS: usize = 10;

/// A scheduler's answer: the chosen waypoint order and its total cost
/// measured from the instance's start position.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScheduleOutcome {
    pub sequence: Vec<Waypoint>,
    pub cost: Cost,
}

/// Work counters for the exhaustive search.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BruteForceStats {
    /// Non-empty prefixes visited (budget-surviving, precedence-valid).
    pub prefixes_visited: u64,
    /// Complete sequences reached.
    pub complete_sequences: u64,
}

/// Minimum-cost valid ordering of the instance's pending waypoints, or
/// `None` when no ordering satisfies every budget.
pub fn best_schedule(
    oracle: &DistanceOracle,
    inst: &ReschedulingInstance,
) -> Result<(Option<ScheduleOutcome>, BruteForceStats), InstanceError> {
    let points = inst.pending_waypoints(oracle);
    if points.len() > MAX_WAYPOINTS {
        return Err(InstanceError::TooManyWaypoints { points: points.len(), cap: MAX_WAYPOINTS });
    }
    let mut stats = BruteForceStats::default();
    let mut best: Option<ScheduleOutcome> = None;
    let mut prefix = Vec::with_capacity(points.len());
    let walk = SequenceWalk::new(inst, &points);
    descend(oracle, &points, walk, &mut prefix, &mut best, &mut stats);
    Ok((best, stats))
}

fn descend(
    oracle: &DistanceOracle,
    points: &[PendingPoint],
    walk: SequenceWalk<'_>,
    prefix: &mut Vec<Waypoint>,
    best: &mut Option<ScheduleOutcome>,
    stats: &mut BruteForceStats,
) {
    if prefix.len() == points.len() {
        stats.complete_sequences += 1;
        // Children are explored in (kind, trip) order, so the first complete
        // sequence at a given cost is already the lexicographic minimum.
        if best.as_ref().is_none_or(|b| walk.dist < b.cost) {
            *best = Some(ScheduleOutcome { sequence: prefix.clone(), cost: walk.dist });
        }
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
        stats.prefixes_visited += 1;
        prefix.push(points[idx].waypoint);
        descend(oracle, points, next, prefix, best, stats);
        prefix.pop();
    }
}
