//! Best-first branch-and-bound scheduler.
//!
//! Partial schedules are expanded lowest-bound-first. The bound of a partial
//! schedule is its cost so far plus, for every waypoint not yet scheduled,
//! the cheapest edge incident to it in the complete waypoint graph (start
//! position included). Every unscheduled waypoint must still be *entered*
//! through one of its incident edges, so the bound never exceeds the cost of
//! any valid completion.
//!
//! The search returns exactly the exhaustive scheduler's answer: same cost,
//! and the same lexicographically-smallest optimal sequence. Equal-bound
//! nodes are therefore only discarded once they can no longer produce a
//! lexicographically smaller optimum than the incumbent.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::brute_force::{ScheduleOutcome, MAX_WAYPOINTS};
use crate::cost::{saturating_add, Cost, INFINITE};
use crate::instance::{InstanceError, PendingPoint, ReschedulingInstance, SequenceWalk};
use crate::roadnet::DistanceOracle;

/// The complete graph over an instance's pending waypoints plus its start
/// position, with each point's cheapest incident edge precomputed.
pub struct WaypointGraph {
    points: Vec<PendingPoint>,
    min_incident: Vec<Cost>,
}

impl WaypointGraph {
    pub fn new(oracle: &DistanceOracle, inst: &ReschedulingInstance) -> Self {
        let points = inst.pending_waypoints(oracle);
        let n = points.len();
        let vertex = |i: usize| {
            if i == 0 {
                inst.start
            } else {
                points[i - 1].waypoint.vertex
            }
        };
        let mut min_incident = vec![INFINITE; n];
        for p in 0..n {
            let mut best = INFINITE;
            for other in 0..=n {
                if other == p + 1 {
                    continue;
                }
                let d = oracle.distance(vertex(p + 1), vertex(other));
                if d < best {
                    best = d;
                }
            }
            min_incident[p] = best;
        }
        WaypointGraph { points, min_incident }
    }

    pub fn points(&self) -> &[PendingPoint] {
        &self.points
    }

    /// `cost_so_far` plus the cheapest incident edge of every remaining
    /// waypoint; equals `cost_so_far` when nothing remains.
    pub fn lower_bound(&self, cost_so_far: Cost, scheduled: &[bool]) -> Cost {
        let mut bound = cost_so_far;
        for (i, done) in scheduled.iter().enumerate() {
            if !done {
                bound = saturating_add(bound, self.min_incident[i]);
            }
        }
        bound
    }
}

/// Work counters for the branch-and-bound search.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BnbStats {
    /// Non-empty partial schedules popped and branched.
    pub nodes_expanded: u64,
    /// Children generated (pushed or completed).
    pub nodes_generated: u64,
}

struct QueueEntry<'a> {
    bound: Cost,
    depth: usize,
    key: Vec<(u8, u32)>,
    sequence: Vec<usize>,
    walk: SequenceWalk<'a>,
}

impl Ord for QueueEntry<'_> {
    fn cmp(&self, other: &Self) -> Ordering {
        // BinaryHeap is a max-heap; reverse so the smallest
        // (bound, depth descending, sequence) comes out first.
        other
            .bound
            .cmp(&self.bound)
            .then_with(|| self.depth.cmp(&other.depth))
            .then_with(|| other.key.cmp(&self.key))
    }
}

impl PartialOrd for QueueEntry<'_> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl PartialEq for QueueEntry<'_> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for QueueEntry<'_> {}

fn key_of(points: &[PendingPoint], sequence: &[usize]) -> Vec<(u8, u32)> {
    sequence
        .iter()
        .map(|&i| (points[i].waypoint.kind as u8, points[i].waypoint.trip.0))
        .collect()
}

/// True when a node with prefix key `prefix` might still complete into a
/// sequence lexicographically smaller than (or equal to a re-derivation of)
/// the incumbent key.
fn can_beat_tie(prefix: &[(u8, u32)], incumbent: &[(u8, u32)]) -> bool {
    for (a, b) in prefix.iter().zip(incumbent.iter()) {
        match a.cmp(b) {
            Ordering::Less => return true,
            Ordering::Greater => return false,
            Ordering::Equal => {}
        }
    }
    true // prefix of the incumbent: smaller completions may exist below
}

/// Best-first branch-and-bound; identical result to the exhaustive search.
pub fn best_schedule(
    oracle: &DistanceOracle,
    inst: &ReschedulingInstance,
) -> Result<(Option<ScheduleOutcome>, BnbStats), InstanceError> {
    let graph = WaypointGraph::new(oracle, inst);
    let n = graph.points.len();
    if n > MAX_WAYPOINTS {
        return Err(InstanceError::TooManyWaypoints { points: n, cap: MAX_WAYPOINTS });
    }
    let mut stats = BnbStats::default();
    if n == 0 {
        return Ok((Some(ScheduleOutcome { sequence: Vec::new(), cost: inst.start_extra }), stats));
    }

    let mut best: Option<(ScheduleOutcome, Vec<(u8, u32)>)> = None;
    let root_walk = SequenceWalk::new(inst, &graph.points);
    let root_scheduled = vec![false; n];
    let mut queue = BinaryHeap::new();
    queue.push(QueueEntry {
        bound: graph.lower_bound(root_walk.dist, &root_scheduled),
        depth: 0,
        key: Vec::new(),
        sequence: Vec::new(),
        walk: root_walk,
    });

    while let Some(entry) = queue.pop() {
        if let Some((incumbent, inc_key)) = &best {
            if entry.bound > incumbent.cost {
                continue; // terminated: bound exceeds the best complete schedule
            }
            if entry.bound == incumbent.cost && !can_beat_tie(&entry.key, inc_key) {
                continue;
            }
        }
        if entry.depth > 0 {
            stats.nodes_expanded += 1;
        }
        let mut scheduled = vec![false; n];
        for &i in &entry.sequence {
            scheduled[i] = true;
        }
        for idx in 0..n {
            if scheduled[idx] {
                continue;
            }
            let mut walk = entry.walk.clone();
            if !walk.try_step(oracle, idx) {
                continue; // invalid child: pruned immediately
            }
            stats.nodes_generated += 1;
            let mut sequence = entry.sequence.clone();
            sequence.push(idx);
            if sequence.len() == n {
                let outcome = ScheduleOutcome {
                    sequence: sequence.iter().map(|&i| graph.points[i].waypoint).collect(),
                    cost: walk.dist,
                };
                let key = key_of(&graph.points, &sequence);
                let better = match &best {
                    None => true,
                    Some((inc, inc_key)) => {
                        (outcome.cost, &key) < (inc.cost, inc_key)
                    }
                };
                if better {
                    best = Some((outcome, key));
                }
                continue;
            }
            scheduled[idx] = true;
            let bound = graph.lower_bound(walk.dist, &scheduled);
            scheduled[idx] = false;
            if let Some((incumbent, _)) = &best {
                if bound > incumbent.cost {
                    continue;
                }
            }
            let key = key_of(&graph.points, &sequence);
            queue.push(QueueEntry { bound, depth: sequence.len(), key, sequence, walk });
        }
    }
    Ok((best.map(|(outcome, _)| outcome), stats))
}
