//! The kinetic tree: one vehicle's materialization of every valid unfinished
//! schedule, as a prefix tree rooted at the vehicle's current position.
//!
//! Each root-to-leaf path is one valid ordering of the vehicle's remaining
//! pickups and dropoffs. Every node stores the residual slack of the
//! constraint its waypoint completes (waiting budget for pickups, ride
//! budget for dropoffs), measured along that node's unique path. Residuals
//! are invariant under vehicle movement: driving toward the next waypoint
//! consumes budget and path distance at the same rate, so the tree only
//! changes when a waypoint is *reached* (prune the branches not taken) or a
//! request is *inserted*.
//!
//! Insertion builds a candidate tree containing exactly the valid schedules
//! of the old trips plus the new one. While rebuilding, the builder carries
//! the new and old path distances; a copied point's residual shrinks by
//! `adj(point) - adj(anchor)` where `adj = new - old` is the accumulated
//! detour at a position and the anchor is the vehicle position for pickups
//! and the trip's own pickup for dropoffs. A dropoff whose pickup lies below
//! every detour therefore keeps its slack automatically, which is what makes
//! slack-filtered insertion return exactly the same leaf set as the plain
//! re-checking mode.
//!
//! Three insertion modes share that skeleton:
//! - `Basic` re-checks each affected point individually;
//! - `Slack` adds sound shortcuts: waiting-time and ride-time cutoffs
//!   (once the path to a node exceeds the new trip's waiting budget, or the
//!   ride since its pickup exceeds the ride budget, nothing below can host
//!   the point) and a bulk-copy test against the subtree's minimum slack;
//! - `Hotspot(theta)` additionally merges a new point into an edge's child
//!   node when it lies within `theta` of all points already in that node,
//!   trading optimality (within the hotspot bound) for tree size.
//!
//! Per-node `delta` follows the min/max slack-time recursion: a node's delta
//! is the smallest residual on the most lenient route of its subtree, so any
//! detour of at most `delta` inserted above the node always leaves at least
//! one valid completion alive. Deltas are recomputed in one post-order pass
//! when a candidate is committed; movement leaves them untouched.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use thiserror::Error;

use crate::cost::{saturating_add, Cost, INFINITE};
use crate::instance::{OnboardTrip, ReschedulingInstance, WaitingTrip};
use crate::roadnet::{DistanceOracle, VertexId};
use crate::trips::{TripId, TripRequest, Waypoint, WaypointKind};

/// Insertion mode of a tree.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TreeMode {
    Basic,
    Slack,
    Hotspot { theta: Cost },
}

/// When branches made obsolete by movement are pruned.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Invalidation {
    /// Prune at every `advance`.
    Eager,
    /// Defer pruning until the next insertion (or explicit `settle`).
    Lazy,
}

#[derive(Debug, Clone, Copy)]
pub struct TreeConfig {
    pub mode: TreeMode,
    pub invalidation: Invalidation,
    pub max_onboard: Option<usize>,
    /// Insertion aborts with [`InsertError::LeafLimit`] past this many leaves.
    pub leaf_limit: u64,
}

impl Default for TreeConfig {
    fn default() -> Self {
        TreeConfig {
            mode: TreeMode::Slack,
            invalidation: Invalidation::Lazy,
            max_onboard: None,
            leaf_limit: 100_000,
        }
    }
}

#[derive(Debug, Error)]
pub enum InsertError {
    #[error("candidate tree exceeded the leaf limit of {0}")]
    LeafLimit(u64),
}

#[derive(Debug, Error)]
pub enum CommitError {
    #[error("candidate was built from a different tree or an outdated revision")]
    StaleCandidate,
}

#[derive(Debug, Error)]
pub enum AdvanceError {
    #[error("waypoint {0} is not next on the selected route")]
    NotOnSelectedRoute(Waypoint),
}

/// One prefix-tree node: normally a single waypoint, several when the node
/// is a hotspot (traversed in arrival order).
#[derive(Debug, Clone)]
pub struct TreeNode {
    points: Vec<Waypoint>,
    /// Distance from the parent's exit vertex to `points[0]`.
    edge_cost: Cost,
    /// Distances between consecutive points inside the node.
    hop_costs: Vec<Cost>,
    /// Residual slack of the constraint completed at each point.
    slacks: Vec<Cost>,
    children: Vec<TreeNode>,
    /// min(own slack, max over children's delta); own slack at leaves.
    delta: Cost,
    /// Minimum slack anywhere in this subtree (bulk-copy filter).
    min_slack: Cost,
}

impl TreeNode {
    pub fn points(&self) -> &[Waypoint] {
        &self.points
    }
    pub fn children(&self) -> &[TreeNode] {
        &self.children
    }
    pub fn delta(&self) -> Cost {
        self.delta
    }
    pub fn slacks(&self) -> &[Cost] {
        &self.slacks
    }
    pub fn edge_cost(&self) -> Cost {
        self.edge_cost
    }
    pub fn hop_costs(&self) -> &[Cost] {
        &self.hop_costs
    }

    fn own_slack(&self) -> Cost {
        self.slacks.iter().copied().min().unwrap_or(INFINITE)
    }

    fn exit_vertex(&self) -> VertexId {
        self.points.last().unwrap().vertex
    }

    fn internal_cost(&self) -> Cost {
        self.hop_costs.iter().copied().sum()
    }

    fn recompute_down(&mut self) {
        for c in &mut self.children {
            c.recompute_down();
        }
        let own = self.own_slack();
        if self.children.is_empty() {
            self.delta = own;
            self.min_slack = own;
        } else {
            let max_child = self.children.iter().map(|c| c.delta).max().unwrap();
            let min_child = self.children.iter().map(|c| c.min_slack).min().unwrap();
            self.delta = own.min(max_child);
            self.min_slack = own.min(min_child);
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct InsertStats {
    /// Budget/slack comparisons performed while building the candidate.
    pub evaluations: u64,
    /// Old-tree nodes walked or copied.
    pub nodes_visited: u64,
    /// Leaves in the finished candidate.
    pub leaves: u64,
}

/// A candidate produced by `try_insert`; nothing changes until `commit`.
#[derive(Debug, Clone)]
pub struct TreeCandidate {
    base_id: u64,
    base_revision: u64,
    origin: VertexId,
    origin_extra: Cost,
    children: Vec<TreeNode>,
    onboard: BTreeMap<TripId, Cost>,
    waiting: BTreeMap<TripId, WaitingInfo>,
    pub best_cost: Cost,
    pub stats: InsertStats,
}

impl TreeCandidate {
    /// Largest point set of any node in the candidate (1 when no hotspots).
    pub fn max_hotspot_size(&self) -> usize {
        fn walk(n: &TreeNode) -> usize {
            n.points.len().max(n.children.iter().map(walk).max().unwrap_or(0))
        }
        self.children.iter().map(walk).max().unwrap_or(0)
    }

    pub fn leaf_count(&self) -> u64 {
        self.stats.leaves
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct WaitingInfo {
    pickup: VertexId,
    dropoff: VertexId,
    /// Remaining waiting budget measured from the tree origin.
    wait_remaining: Cost,
    /// Full ride budget; consumption starts at the pickup.
    ride_budget: Cost,
}

/// The kinetic tree owned by one vehicle.
#[derive(Debug, Clone)]
pub struct KineticTree {
    id: u64,
    revision: u64,
    origin: VertexId,
    origin_extra: Cost,
    children: Vec<TreeNode>,
    config: TreeConfig,
    onboard: BTreeMap<TripId, Cost>,
    waiting: BTreeMap<TripId, WaitingInfo>,
    selected: Vec<Waypoint>,
    pending_advances: Vec<Waypoint>,
}

fn next_tree_id() -> u64 {
    use std::sync::atomic::{AtomicU64, Ordering};
    static NEXT: AtomicU64 = AtomicU64::new(1);
    NEXT.fetch_add(1, Ordering::Relaxed)
}

impl KineticTree {
    pub fn new(origin: VertexId, config: TreeConfig) -> Self {
        KineticTree {
            id: next_tree_id(),
            revision: 0,
            origin,
            origin_extra: 0,
            children: Vec::new(),
            config,
            onboard: BTreeMap::new(),
            waiting: BTreeMap::new(),
            selected: Vec::new(),
            pending_advances: Vec::new(),
        }
    }

    pub fn config(&self) -> &TreeConfig {
        &self.config
    }

    pub fn origin(&self) -> (VertexId, Cost) {
        (self.origin, self.origin_extra)
    }

    pub fn is_empty(&self) -> bool {
        self.children.is_empty()
    }

    pub fn active_trip_count(&self) -> usize {
        self.onboard.len() + self.waiting.len()
    }

    pub fn onboard_count(&self) -> usize {
        self.onboard.len()
    }

    pub fn first_layer(&self) -> &[TreeNode] {
        &self.children
    }

    /// The minimum-cost leaf path currently chosen for execution. Reflects
    /// settled state; in lazy mode consumed waypoints are still listed until
    /// the next settle.
    pub fn selected_route(&self) -> &[Waypoint] {
        &self.selected
    }

    /// Waypoints of the selected route not yet reached.
    pub fn selected_remaining(&self) -> &[Waypoint] {
        &self.selected[self.pending_advances.len()..]
    }

    /// Cost of the selected route from the tree origin; `None` when empty.
    pub fn best_cost(&self) -> Option<Cost> {
        if self.children.is_empty() {
            return None;
        }
        Some(best_leaf(&self.children, self.origin_extra).0)
    }

    /// All root-to-leaf schedules with their costs (settled state).
    pub fn leaves(&self) -> Vec<(Vec<Waypoint>, Cost)> {
        let mut out = Vec::new();
        let mut prefix = Vec::new();
        for c in &self.children {
            collect_leaves(c, self.origin_extra, &mut prefix, &mut out);
        }
        out
    }

    pub fn leaf_count(&self) -> usize {
        fn count(n: &TreeNode) -> usize {
            if n.children.is_empty() {
                1
            } else {
                n.children.iter().map(count).sum()
            }
        }
        self.children.iter().map(count).sum()
    }

    /// Snapshot of the rescheduling state as seen `traveled` deciseconds of
    /// driving past the origin, with the vehicle at `now`/`now_extra`.
    pub fn instance_snapshot(
        &self,
        now: VertexId,
        now_extra: Cost,
        traveled: Cost,
    ) -> ReschedulingInstance {
        let mut inst = ReschedulingInstance::at(now);
        inst.start_extra = now_extra;
        inst.max_onboard = self.config.max_onboard;
        for (&trip, &budget) in &self.onboard {
            inst.onboard.push(OnboardTrip {
                trip,
                dropoff: self.dropoff_vertex(trip),
                ride_budget: if budget == INFINITE { INFINITE } else { budget.saturating_sub(traveled) },
            });
        }
        for (&trip, info) in &self.waiting {
            inst.waiting.push(WaitingTrip {
                trip,
                pickup: info.pickup,
                dropoff: info.dropoff,
                wait_budget: if info.wait_remaining == INFINITE {
                    INFINITE
                } else {
                    info.wait_remaining.saturating_sub(traveled)
                },
                ride_budget: info.ride_budget,
            });
        }
        inst
    }

    fn dropoff_vertex(&self, trip: TripId) -> VertexId {
        fn find(nodes: &[TreeNode], trip: TripId) -> Option<VertexId> {
            for n in nodes {
                for p in &n.points {
                    if p.trip == trip && p.kind == WaypointKind::Dropoff {
                        return Some(p.vertex);
                    }
                }
                if let Some(v) = find(&n.children, trip) {
                    return Some(v);
                }
            }
            None
        }
        find(&self.children, trip).expect("onboard trip has a dropoff in the tree")
    }

    /// Applies deferred movement pruning (lazy mode); a no-op otherwise.
    pub fn settle(&mut self) {
        let pending = std::mem::take(&mut self.pending_advances);
        for wp in pending {
            self.apply_advance(wp);
        }
    }

    /// Records that the vehicle reached the next waypoint of the selected
    /// route. Eager trees prune immediately; lazy trees defer to the next
    /// insertion or `settle`.
    pub fn advance(&mut self, reached: Waypoint) -> Result<(), AdvanceError> {
        let next_index = self.pending_advances.len();
        if self.selected.get(next_index) != Some(&reached) {
            return Err(AdvanceError::NotOnSelectedRoute(reached));
        }
        match self.config.invalidation {
            Invalidation::Eager => {
                self.apply_advance(reached);
            }
            Invalidation::Lazy => self.pending_advances.push(reached),
        }
        Ok(())
    }

    fn apply_advance(&mut self, reached: Waypoint) {
        let idx = self
            .children
            .iter()
            .position(|c| c.points[0] == reached)
            .expect("advance target is a first-layer entry");
        let mut node = self.children.swap_remove(idx);
        let leg = node.edge_cost;
        // budgets consume at the driving rate
        for budget in self.onboard.values_mut() {
            if *budget != INFINITE {
                *budget = budget.saturating_sub(leg);
            }
        }
        for info in self.waiting.values_mut() {
            if info.wait_remaining != INFINITE {
                info.wait_remaining = info.wait_remaining.saturating_sub(leg);
            }
        }
        match reached.kind {
            WaypointKind::Pickup => {
                let info = self.waiting.remove(&reached.trip).expect("picked trip was waiting");
                self.onboard.insert(reached.trip, info.ride_budget);
            }
            WaypointKind::Dropoff => {
                self.onboard.remove(&reached.trip);
            }
            WaypointKind::Request => {}
        }
        self.origin = reached.vertex;
        self.origin_extra = 0;
        if node.points.len() == 1 {
            self.children = std::mem::take(&mut node.children);
        } else {
            node.points.remove(0);
            node.slacks.remove(0);
            node.edge_cost = node.hop_costs.remove(0);
            self.children = vec![node];
        }
        self.revision += 1;
        self.refresh_selected();
    }

    fn refresh_selected(&mut self) {
        self.selected = if self.children.is_empty() {
            Vec::new()
        } else {
            best_leaf(&self.children, self.origin_extra).1
        };
    }

    /// Inserts a new request from the tree origin (vehicle at rest there).
    pub fn try_insert(
        &mut self,
        oracle: &DistanceOracle,
        trip: &TripRequest,
    ) -> Result<Option<TreeCandidate>, InsertError> {
        self.settle(); // the origin may still move under deferred pruning
        let (origin, extra) = (self.origin, self.origin_extra);
        self.try_insert_at(oracle, trip, origin, extra, 0)
    }

    /// Inserts a new request with the vehicle `traveled` deciseconds past the
    /// origin, currently heading to `now` with `now_extra` still to drive.
    ///
    /// The request point is the vehicle's current position, so the new
    /// trip's waiting budget starts whole. Branch re-pricing from the live
    /// position is folded into the same adjustment arithmetic as insertion
    /// detours, with exact re-checking of every affected constraint.
    pub fn try_insert_at(
        &mut self,
        oracle: &DistanceOracle,
        trip: &TripRequest,
        now: VertexId,
        now_extra: Cost,
        traveled: Cost,
    ) -> Result<Option<TreeCandidate>, InsertError> {
        let mode = self.config.mode;
        self.insert_with_mode(oracle, trip, now, now_extra, traveled, mode)
    }

    /// Hotspot-clustering insertion with an explicit merge radius, whatever
    /// the tree's configured mode.
    pub fn insert_hotspot(
        &mut self,
        oracle: &DistanceOracle,
        trip: &TripRequest,
        theta: Cost,
    ) -> Result<Option<TreeCandidate>, InsertError> {
        self.settle();
        let (origin, extra) = (self.origin, self.origin_extra);
        self.insert_with_mode(oracle, trip, origin, extra, 0, TreeMode::Hotspot { theta })
    }

    fn insert_with_mode(
        &mut self,
        oracle: &DistanceOracle,
        trip: &TripRequest,
        now: VertexId,
        now_extra: Cost,
        traveled: Cost,
        mode: TreeMode,
    ) -> Result<Option<TreeCandidate>, InsertError> {
        self.settle();
        let ride_budget = trip.service_budget(oracle);
        let mut builder = Builder {
            oracle,
            mode,
            max_onboard: self.config.max_onboard,
            leaf_limit: self.config.leaf_limit,
            traveled,
            pickup: Waypoint::pickup(trip.id, trip.source),
            dropoff: Waypoint::dropoff(trip.id, trip.destination),
            wait_budget: trip.max_wait,
            ride_budget,
            stats: InsertStats::default(),
        };
        let state = PathState {
            at: now,
            new_dist: now_extra,
            old_dist: self.origin_extra,
            onboard: self.onboard.len(),
            picked_adj: Vec::new(),
            pickup_dist: None,
            prepaid_pickup: None,
            prepaid_dropoff: None,
            under_insertion: false,
        };
        let children = builder.build_children(&self.children, &state, Stage::Pickup)?;
        if children.is_empty() {
            return Ok(None);
        }
        let (best_cost, _) = best_leaf(&children, now_extra);
        let mut onboard = BTreeMap::new();
        for (&t, &b) in &self.onboard {
            onboard.insert(t, if b == INFINITE { INFINITE } else { b.saturating_sub(traveled) });
        }
        let mut waiting = BTreeMap::new();
        for (&t, info) in &self.waiting {
            let mut info = *info;
            if info.wait_remaining != INFINITE {
                info.wait_remaining = info.wait_remaining.saturating_sub(traveled);
            }
            waiting.insert(t, info);
        }
        waiting.insert(
            trip.id,
            WaitingInfo {
                pickup: trip.source,
                dropoff: trip.destination,
                wait_remaining: trip.max_wait,
                ride_budget,
            },
        );
        Ok(Some(TreeCandidate {
            base_id: self.id,
            base_revision: self.revision,
            origin: now,
            origin_extra: now_extra,
            children,
            onboard,
            waiting,
            best_cost,
            stats: builder.stats,
        }))
    }

    /// Makes a previously built candidate the current tree. Deltas are
    /// recomputed here, in one post-order pass, and only for the chosen tree.
    pub fn commit(&mut self, candidate: TreeCandidate) -> Result<(), CommitError> {
        self.settle();
        if candidate.base_id != self.id || candidate.base_revision != self.revision {
            return Err(CommitError::StaleCandidate);
        }
        self.origin = candidate.origin;
        self.origin_extra = candidate.origin_extra;
        self.children = candidate.children;
        self.onboard = candidate.onboard;
        self.waiting = candidate.waiting;
        for c in &mut self.children {
            c.recompute_down();
        }
        self.revision += 1;
        self.refresh_selected();
        Ok(())
    }

    /// Slack-time verdict for inserting `trip`'s pickup on one tree edge.
    ///
    /// The edge is addressed by the waypoint path to its parent node (empty
    /// for root edges) and the child index (`None` means the leaf-extension
    /// edge past the parent). In slack mode the verdict is exact for the
    /// pickup: `true` iff the waiting-time condition holds at the edge and
    /// at least one old schedule through it survives the detour. In basic
    /// mode only the local waiting-time re-check decides.
    pub fn edge_feasible(
        &self,
        oracle: &DistanceOracle,
        trip: &TripRequest,
        parent_path: &[Waypoint],
        child: Option<usize>,
    ) -> bool {
        let mut at = self.origin;
        let mut dist = self.origin_extra;
        let mut nodes = &self.children;
        let mut remaining = parent_path;
        let mut picked: Vec<TripId> = Vec::new();
        while !remaining.is_empty() {
            let node = nodes
                .iter()
                .find(|n| n.points[0] == remaining[0])
                .expect("parent path exists in tree");
            assert!(remaining.starts_with(&node.points), "path follows whole nodes");
            dist = saturating_add(dist, node.edge_cost);
            dist = saturating_add(dist, node.internal_cost());
            for p in &node.points {
                if p.kind == WaypointKind::Pickup {
                    picked.push(p.trip);
                }
            }
            at = node.exit_vertex();
            remaining = &remaining[node.points.len()..];
            nodes = &node.children;
        }
        let to_pickup = saturating_add(dist, oracle.distance(at, trip.source));
        let wait_ok = to_pickup <= trip.max_wait;
        if matches!(self.config.mode, TreeMode::Basic) {
            return wait_ok;
        }
        if !wait_ok {
            return false;
        }
        let child_node = match child {
            None => return true, // leaf extension: nothing downstream to break
            Some(i) => &nodes[i],
        };
        let detour = saturating_add(
            oracle.distance(at, trip.source),
            oracle.distance(trip.source, child_node.points[0].vertex),
        )
        .saturating_sub(child_node.edge_cost);
        if detour <= child_node.delta {
            return true; // a most-lenient route certainly survives
        }
        let mut picked = Vec::new();
        survives_shift(child_node, detour, &mut picked)
    }

    /// Indented text dump with per-point slacks and per-node delta.
    pub fn dump_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "root @{} (+{})", self.origin, self.origin_extra);
        fn rec(n: &TreeNode, depth: usize, out: &mut String) {
            let pts: Vec<String> = n
                .points
                .iter()
                .zip(&n.slacks)
                .map(|(p, s)| format!("{p} slack={}", fmt_cost(*s)))
                .collect();
            let _ = writeln!(
                out,
                "{}{} edge={} delta={}",
                "  ".repeat(depth + 1),
                pts.join(" | "),
                n.edge_cost,
                fmt_cost(n.delta),
            );
            for c in &n.children {
                rec(c, depth + 1, out);
            }
        }
        for c in &self.children {
            rec(c, 0, &mut out);
        }
        out
    }

    /// Dot-style edge list (`parent -> child` per line) for fixture diffing.
    pub fn dump_dot(&self) -> String {
        fn label(n: &TreeNode) -> String {
            n.points.iter().map(|p| p.to_string()).collect::<Vec<_>>().join("+")
        }
        let mut out = String::from("digraph tree {\n");
        let _ = writeln!(out, "  root [label=\"@{}\"];", self.origin);
        fn rec(parent: &str, n: &TreeNode, out: &mut String, counter: &mut usize) {
            let id = format!("n{}", *counter);
            *counter += 1;
            let _ = writeln!(out, "  {id} [label=\"{}\"];", label(n));
            let _ = writeln!(out, "  {parent} -> {id} [label=\"{}\"];", n.edge_cost);
            for c in &n.children {
                rec(&id, c, out, counter);
            }
        }
        let mut counter = 0;
        for c in &self.children {
            rec("root", c, &mut out, &mut counter);
        }
        out.push_str("}\n");
        out
    }
}

fn fmt_cost(c: Cost) -> String {
    if c == INFINITE {
        "inf".into()
    } else {
        c.to_string()
    }
}

/// Does at least one completion under `node` stay valid when everything
/// start-anchored below gains `shift` extra distance? Exact: dropoffs whose
/// pickups sit below the shifted edge are unaffected.
fn survives_shift(node: &TreeNode, shift: Cost, picked_below: &mut Vec<TripId>) -> bool {
    let marker = picked_below.len();
    for (p, &slack) in node.points.iter().zip(&node.slacks) {
        let affected = match p.kind {
            WaypointKind::Pickup => {
                picked_below.push(p.trip);
                true
            }
            WaypointKind::Dropoff => !picked_below.contains(&p.trip),
            WaypointKind::Request => false,
        };
        if affected && slack < shift {
            picked_below.truncate(marker);
            return false;
        }
    }
    let ok = node.children.is_empty()
        || node.children.iter().any(|c| survives_shift(c, shift, picked_below));
    picked_below.truncate(marker);
    ok
}

/// (cost, tie-break key, route) of the best leaf found so far.
type BestLeaf = Option<(Cost, Vec<(u8, u32)>, Vec<Waypoint>)>;

fn best_leaf(children: &[TreeNode], extra: Cost) -> (Cost, Vec<Waypoint>) {
    fn rec(n: &TreeNode, cost: Cost, path: &mut Vec<Waypoint>, best: &mut BestLeaf) {
        let cost = saturating_add(cost, saturating_add(n.edge_cost, n.internal_cost()));
        path.extend_from_slice(&n.points);
        if n.children.is_empty() {
            let key: Vec<(u8, u32)> = path.iter().map(|w| (w.kind as u8, w.trip.0)).collect();
            let better = match best {
                None => true,
                Some((bc, bk, _)) => (cost, &key) < (*bc, bk),
            };
            if better {
                *best = Some((cost, key, path.clone()));
            }
        } else {
            for c in &n.children {
                rec(c, cost, path, best);
            }
        }
        path.truncate(path.len() - n.points.len());
    }
    let mut best = None;
    let mut path = Vec::new();
    for c in children {
        rec(c, extra, &mut path, &mut best);
    }
    let (cost, _, route) = best.expect("best_leaf on nonempty children");
    (cost, route)
}

fn collect_leaves(
    n: &TreeNode,
    cost: Cost,
    prefix: &mut Vec<Waypoint>,
    out: &mut Vec<(Vec<Waypoint>, Cost)>,
) {
    let cost = saturating_add(cost, saturating_add(n.edge_cost, n.internal_cost()));
    prefix.extend_from_slice(&n.points);
    if n.children.is_empty() {
        out.push((prefix.clone(), cost));
    } else {
        for c in &n.children {
            collect_leaves(c, cost, prefix, out);
        }
    }
    prefix.truncate(prefix.len() - n.points.len());
}

/// Which of the new request's points still needs a position.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Stage {
    Pickup,
    Dropoff,
    Done,
}

impl Stage {
    fn next(self) -> Stage {
        match self {
            Stage::Pickup => Stage::Dropoff,
            Stage::Dropoff => Stage::Done,
            Stage::Done => Stage::Done,
        }
    }
}

/// Path context while rebuilding: position in the new sequence, the matched
/// position in the old tree, and enough bookkeeping to adjust every copied
/// slack exactly.
#[derive(Debug, Clone)]
struct PathState {
    at: VertexId,
    /// Distance from the live vehicle position along the new sequence.
    new_dist: Cost,
    /// Distance of the matched old position from the *old* origin.
    old_dist: Cost,
    onboard: usize,
    /// Adjustment recorded at each pickup passed in the rebuilt region.
    picked_adj: Vec<(TripId, Cost)>,
    /// New-sequence distance at the new trip's pickup, once placed.
    pickup_dist: Option<Cost>,
    /// Arrival distance at the new pickup, precomputed by the waiting-time
    /// cutoff one level up; lets the placement reuse that comparison.
    prepaid_pickup: Option<Cost>,
    /// Same for the new dropoff and the ride-time cutoff.
    prepaid_dropoff: Option<Cost>,
    /// True once the path passed an inserted or merged point: everything
    /// below sits "under the insertion" and plain re-checking must test it.
    under_insertion: bool,
}

impl PathState {
    /// Accumulated extra distance versus the old tree at this position.
    fn adjustment(&self, traveled: Cost) -> Cost {
        let adj = self.new_dist as i128 + traveled as i128 - self.old_dist as i128;
        debug_assert!(adj >= 0, "triangle inequality keeps adjustments nonnegative");
        adj.max(0) as u64
    }
}

struct Builder<'a> {
    oracle: &'a DistanceOracle,
    mode: TreeMode,
    max_onboard: Option<usize>,
    leaf_limit: u64,
    traveled: Cost,
    pickup: Waypoint,
    dropoff: Waypoint,
    wait_budget: Cost,
    ride_budget: Cost,
    stats: InsertStats,
}

impl Builder<'_> {
    fn d(&self, a: VertexId, b: VertexId) -> Cost {
        if a == b {
            0
        } else {
            self.oracle.distance(a, b)
        }
    }

    fn point(&self, stage: Stage) -> Waypoint {
        match stage {
            Stage::Pickup => self.pickup,
            Stage::Dropoff => self.dropoff,
            Stage::Done => unreachable!(),
        }
    }

    /// Builds the replacement for a children list, with the new request's
    /// remaining points (per `stage`) placed in every valid way.
    ///
    /// In hotspot mode, an edge whose child node lies within `theta` of the
    /// pending point is a *merge edge*: the point joins that node and the
    /// edge hosts no other insertion. A level with a merge edge also skips
    /// the place-before-children position, so nearby points collapse into
    /// one node instead of multiplying branches. Each branch merges
    /// independently; a failed merge kills its branch, never its siblings.
    fn build_children(
        &mut self,
        old: &[TreeNode],
        state: &PathState,
        stage: Stage,
    ) -> Result<Vec<TreeNode>, InsertError> {
        let mut out = Vec::new();
        let mut saw_merge_edge = false;
        for c in old {
            if stage != Stage::Done && self.merge_eligible(c, stage) {
                saw_merge_edge = true;
                if let Some(merged) = self.try_merge(c, state, stage)? {
                    out.push(merged);
                }
                continue;
            }
            if let Some(node) = self.rebuild_child(c, state, stage)? {
                out.push(node);
            }
        }
        if stage != Stage::Done && !saw_merge_edge {
            if let Some(node) = self.place_new(old, state, stage)? {
                out.push(node);
            }
        }
        Ok(out)
    }

    /// Whether the pending point lies within theta of every point of `c`.
    fn merge_eligible(&mut self, c: &TreeNode, stage: Stage) -> bool {
        let TreeMode::Hotspot { theta } = self.mode else { return false };
        let wp = self.point(stage);
        for q in &c.points {
            self.stats.evaluations += 1;
            if self.d(q.vertex, wp.vertex) > theta {
                return false;
            }
        }
        true
    }

    /// Places the pending point as a fresh node before `old` children.
    fn place_new(
        &mut self,
        old: &[TreeNode],
        state: &PathState,
        stage: Stage,
    ) -> Result<Option<TreeNode>, InsertError> {
        let wp = self.point(stage);
        let step = self.d(state.at, wp.vertex);
        let arrive = saturating_add(state.new_dist, step);
        let prepaid = match stage {
            Stage::Pickup => state.prepaid_pickup == Some(arrive),
            Stage::Dropoff => state.prepaid_dropoff == Some(arrive),
            Stage::Done => false,
        };
        if !prepaid {
            self.stats.evaluations += 1;
        }
        let slack = match stage {
            Stage::Pickup => {
                if let Some(cap) = self.max_onboard {
                    if state.onboard >= cap {
                        return Ok(None);
                    }
                }
                match crate::cost::sub_budget(self.wait_budget, arrive) {
                    Some(s) => s,
                    None => return Ok(None),
                }
            }
            Stage::Dropoff => {
                let ride = arrive - state.pickup_dist.expect("dropoff placed after pickup");
                match crate::cost::sub_budget(self.ride_budget, ride) {
                    Some(s) => s,
                    None => return Ok(None),
                }
            }
            Stage::Done => unreachable!(),
        };
        let mut next = state.clone();
        next.at = wp.vertex;
        next.new_dist = arrive;
        next.prepaid_pickup = None;
        next.prepaid_dropoff = None;
        next.under_insertion = true;
        match stage {
            Stage::Pickup => {
                next.onboard += 1;
                next.pickup_dist = Some(arrive);
            }
            Stage::Dropoff => next.onboard -= 1,
            Stage::Done => unreachable!(),
        }
        let children = self.build_children(old, &next, stage.next())?;
        if (children.is_empty() && !old.is_empty())
            || (stage == Stage::Pickup && children.is_empty())
        {
            return Ok(None);
        }
        if children.is_empty() {
            self.bump_leaves(1)?;
        }
        Ok(Some(TreeNode {
            points: vec![wp],
            edge_cost: step,
            hop_costs: Vec::new(),
            slacks: vec![slack],
            children,
            delta: 0,
            min_slack: 0,
        }))
    }

    /// Copies one old node (adjusting slacks, pruning dead branches) and
    /// recurses into its subtree with the pending points.
    fn rebuild_child(
        &mut self,
        c: &TreeNode,
        state: &PathState,
        stage: Stage,
    ) -> Result<Option<TreeNode>, InsertError> {
        self.stats.nodes_visited += 1;
        let new_step = self.d(state.at, c.points[0].vertex);
        let mut next = state.clone();
        next.new_dist = saturating_add(next.new_dist, new_step);
        next.old_dist = saturating_add(next.old_dist, c.edge_cost);
        let adj = next.adjustment(self.traveled);

        // Shortcut: nothing above changed and nothing is pending, so the
        // whole subtree is valid as-is. Plain re-checking only earns it
        // outside inserted regions; it re-tests each point under one.
        let clean = adj == 0 && next.picked_adj.is_empty();
        let skip_walk = match self.mode {
            TreeMode::Basic => clean && !next.under_insertion,
            _ => clean,
        };
        if stage == Stage::Done && skip_walk {
            let leaves = count_leaves(c);
            self.bump_leaves(leaves)?;
            self.stats.nodes_visited += count_nodes(c) - 1;
            let mut copy = c.clone();
            copy.edge_cost = new_step;
            return Ok(Some(copy));
        }
        // Slack-mode bulk accept: the detour fits under every slack below.
        // Leaf-only subtrees skip it: the test would cost as much as it saves.
        if stage == Stage::Done && !matches!(self.mode, TreeMode::Basic) && !c.children.is_empty() {
            self.stats.evaluations += 1;
            if adj <= c.min_slack {
                let leaves = count_leaves(c);
                self.bump_leaves(leaves)?;
                self.stats.nodes_visited += count_nodes(c) - 1;
                let mut copy = c.clone();
                copy.edge_cost = new_step;
                self.apply_shift(&mut copy, &mut next);
                return Ok(Some(copy));
            }
        }

        let mut slacks = Vec::with_capacity(c.points.len());
        let marker = next.picked_adj.len();
        for (i, (p, &old_slack)) in c.points.iter().zip(&c.slacks).enumerate() {
            if i > 0 {
                next.new_dist = saturating_add(next.new_dist, c.hop_costs[i - 1]);
                next.old_dist = saturating_add(next.old_dist, c.hop_costs[i - 1]);
            }
            match self.recheck_point(p, old_slack, &mut next, adj) {
                Some(s) => slacks.push(s),
                None => {
                    next.picked_adj.truncate(marker);
                    return Ok(None);
                }
            }
        }

        // Cutoffs (slack and hotspot modes): once the path already exceeds
        // the new trip's waiting budget, no edge below can take the pickup;
        // once the ride since the new pickup exceeds its ride budget, no
        // edge below can take the dropoff. Distances only grow downward, so
        // both prune exactly, and each comparison doubles as the placement
        // check for the position right below this node.
        next.prepaid_pickup = None;
        next.prepaid_dropoff = None;
        if !matches!(self.mode, TreeMode::Basic) {
            match stage {
                Stage::Pickup => {
                    self.stats.evaluations += 1;
                    let reach =
                        saturating_add(next.new_dist, self.d(c.exit_vertex(), self.pickup.vertex));
                    if reach > self.wait_budget {
                        return Ok(None);
                    }
                    next.prepaid_pickup = Some(reach);
                }
                Stage::Dropoff => {
                    self.stats.evaluations += 1;
                    let reach =
                        saturating_add(next.new_dist, self.d(c.exit_vertex(), self.dropoff.vertex));
                    let ride = reach - next.pickup_dist.expect("pickup placed before dropoff stage");
                    if ride > self.ride_budget {
                        return Ok(None);
                    }
                    next.prepaid_dropoff = Some(reach);
                }
                Stage::Done => {}
            }
        }

        next.at = c.exit_vertex();
        let children = self.build_children(&c.children, &next, stage)?;
        if children.is_empty() {
            if !c.children.is_empty() || stage != Stage::Done {
                return Ok(None);
            }
            self.bump_leaves(1)?;
        }
        Ok(Some(TreeNode {
            points: c.points.clone(),
            edge_cost: new_step,
            hop_costs: c.hop_costs.clone(),
            slacks,
            children,
            delta: 0,
            min_slack: 0,
        }))
    }

    /// Re-checks one copied point under the current adjustment; returns its
    /// new slack, or `None` when the constraint breaks. Counts one
    /// evaluation per comparison actually made.
    fn recheck_point(
        &mut self,
        p: &Waypoint,
        old_slack: Cost,
        next: &mut PathState,
        adj: Cost,
    ) -> Option<Cost> {
        match p.kind {
            WaypointKind::Pickup => {
                if let Some(cap) = self.max_onboard {
                    if next.onboard >= cap {
                        return None;
                    }
                }
                next.onboard += 1;
                next.picked_adj.push((p.trip, adj));
                if adj == 0 && !self.charges_untouched(next) {
                    return Some(old_slack);
                }
                self.stats.evaluations += 1;
                let s = crate::cost::sub_budget(old_slack, adj)?;
                Some(s)
            }
            WaypointKind::Dropoff => {
                next.onboard = next.onboard.saturating_sub(1);
                let anchor = next
                    .picked_adj
                    .iter()
                    .rev()
                    .find(|(t, _)| *t == p.trip)
                    .map(|&(_, a)| a)
                    .unwrap_or(0);
                let effective = adj - anchor;
                if effective == 0 && !self.charges_untouched(next) {
                    return Some(old_slack);
                }
                self.stats.evaluations += 1;
                let s = crate::cost::sub_budget(old_slack, effective)?;
                Some(s)
            }
            WaypointKind::Request => Some(old_slack),
        }
    }

    /// Plain re-checking cannot tell an untouched constraint from an
    /// affected one, so under an insertion it tests every point; the
    /// slack-time bookkeeping skips the provably untouched ones.
    fn charges_untouched(&self, state: &PathState) -> bool {
        matches!(self.mode, TreeMode::Basic) && state.under_insertion
    }

    /// Arithmetic-only slack rewrite for a bulk-accepted subtree.
    fn apply_shift(&mut self, node: &mut TreeNode, state: &mut PathState) {
        let adj = state.adjustment(self.traveled);
        let marker = state.picked_adj.len();
        for (p, slack) in node.points.iter().zip(node.slacks.iter_mut()) {
            match p.kind {
                WaypointKind::Pickup => {
                    state.picked_adj.push((p.trip, adj));
                    *slack = slack.saturating_sub(adj);
                }
                WaypointKind::Dropoff => {
                    let anchor = state
                        .picked_adj
                        .iter()
                        .rev()
                        .find(|(t, _)| *t == p.trip)
                        .map(|&(_, a)| a)
                        .unwrap_or(0);
                    *slack = slack.saturating_sub(adj - anchor);
                }
                WaypointKind::Request => {}
            }
        }
        for c in &mut node.children {
            self.apply_shift(c, state);
        }
        state.picked_adj.truncate(marker);
    }

    /// Merges the pending point into the theta-eligible child `c`, checking
    /// its own constraint at the appended position and rebuilding the
    /// subtree below. `None` kills this branch only.
    fn try_merge(
        &mut self,
        c: &TreeNode,
        state: &PathState,
        stage: Stage,
    ) -> Result<Option<TreeNode>, InsertError> {
        let wp = self.point(stage);
        // Rebuild the node's own points first (they sit before the merged
        // point and may carry a re-pricing adjustment).
        self.stats.nodes_visited += 1;
        let new_step = self.d(state.at, c.points[0].vertex);
        let mut next = state.clone();
        next.new_dist = saturating_add(next.new_dist, new_step);
        next.old_dist = saturating_add(next.old_dist, c.edge_cost);
        next.prepaid_pickup = None;
        next.prepaid_dropoff = None;
        let adj = next.adjustment(self.traveled);
        let mut slacks = Vec::with_capacity(c.points.len() + 1);
        let marker = next.picked_adj.len();
        for (i, (p, &old_slack)) in c.points.iter().zip(&c.slacks).enumerate() {
            if i > 0 {
                next.new_dist = saturating_add(next.new_dist, c.hop_costs[i - 1]);
                next.old_dist = saturating_add(next.old_dist, c.hop_costs[i - 1]);
            }
            match self.recheck_point(p, old_slack, &mut next, adj) {
                Some(s) => slacks.push(s),
                None => {
                    next.picked_adj.truncate(marker);
                    return Ok(None);
                }
            }
        }
        // The merged point rides at the end of the hotspot.
        let tail_hop = self.d(c.exit_vertex(), wp.vertex);
        next.new_dist = saturating_add(next.new_dist, tail_hop);
        self.stats.evaluations += 1;
        let own_slack = match stage {
            Stage::Pickup => {
                if let Some(cap) = self.max_onboard {
                    if next.onboard >= cap {
                        next.picked_adj.truncate(marker);
                        return Ok(None);
                    }
                }
                match crate::cost::sub_budget(self.wait_budget, next.new_dist) {
                    Some(s) => s,
                    None => {
                        next.picked_adj.truncate(marker);
                        return Ok(None);
                    }
                }
            }
            Stage::Dropoff => {
                let ride = next.new_dist - next.pickup_dist.expect("dropoff merged after pickup");
                match crate::cost::sub_budget(self.ride_budget, ride) {
                    Some(s) => s,
                    None => {
                        next.picked_adj.truncate(marker);
                        return Ok(None);
                    }
                }
            }
            Stage::Done => unreachable!(),
        };
        match stage {
            Stage::Pickup => {
                next.onboard += 1;
                next.pickup_dist = Some(next.new_dist);
            }
            Stage::Dropoff => next.onboard -= 1,
            Stage::Done => {}
        }
        slacks.push(own_slack);
        next.at = wp.vertex;
        next.under_insertion = true;
        let children = self.build_children(&c.children, &next, stage.next())?;
        if (children.is_empty() && !c.children.is_empty())
            || (children.is_empty() && stage == Stage::Pickup)
        {
            return Ok(None);
        }
        if children.is_empty() {
            self.bump_leaves(1)?;
        }
        let mut points = c.points.clone();
        points.push(wp);
        let mut hops = c.hop_costs.clone();
        hops.push(tail_hop);
        Ok(Some(TreeNode {
            points,
            edge_cost: new_step,
            hop_costs: hops,
            slacks,
            children,
            delta: 0,
            min_slack: 0,
        }))
    }

    fn bump_leaves(&mut self, n: u64) -> Result<(), InsertError> {
        self.stats.leaves += n;
        if self.stats.leaves > self.leaf_limit {
            Err(InsertError::LeafLimit(self.leaf_limit))
        } else {
            Ok(())
        }
    }
}

fn count_leaves(n: &TreeNode) -> u64 {
    if n.children.is_empty() {
        1
    } else {
        n.children.iter().map(count_leaves).sum()
    }
}

fn count_nodes(n: &TreeNode) -> u64 {
    1 + n.children.iter().map(count_nodes).sum::<u64>()
}
