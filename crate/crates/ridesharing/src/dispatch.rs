//! Fleet-level assignment: a grid spatial index to cheaply find the vehicles
//! that might be within waiting range of a pickup, and min-cost-bid winner
//! selection over their offers.
//!
//! The index is allowed to over-approximate: cells hold vehicles by their
//! last reported coordinates, and a query returns every vehicle in the
//! cells overlapping the search radius (plus a safety margin for movement
//! since the last report). It must return a superset of the truly-in-range
//! fleet; the scheduler re-checks real network distances when bidding.

use std::collections::BTreeSet;

use crate::cost::Cost;
use crate::roadnet::VertexId;

pub type VehicleId = u32;

/// Waiting-time radius in meters: how far a vehicle can be and still reach
/// the pickup within `wait` deciseconds at `speed_mps`.
pub fn wait_radius_m(wait_ds: Cost, speed_mps: f64) -> f64 {
    wait_ds as f64 / 10.0 * speed_mps
}

/// Uniform-cell spatial index over vehicle positions.
#[derive(Debug, Clone)]
pub struct GridIndex {
    cell_size: f64,
    min_x: f64,
    min_y: f64,
    cols: i32,
    rows: i32,
    cells: Vec<BTreeSet<VehicleId>>,
    position_cell: Vec<Option<i32>>,
}

impl GridIndex {
    /// An index over the bounding box of `coords` with the given cell size.
    pub fn new(coords: &[(f64, f64)], cell_size: f64, fleet: usize) -> Self {
        assert!(cell_size > 0.0);
        let min_x = coords.iter().map(|c| c.0).fold(f64::INFINITY, f64::min);
        let max_x = coords.iter().map(|c| c.0).fold(f64::NEG_INFINITY, f64::max);
        let min_y = coords.iter().map(|c| c.1).fold(f64::INFINITY, f64::min);
        let max_y = coords.iter().map(|c| c.1).fold(f64::NEG_INFINITY, f64::max);
        let cols = (((max_x - min_x) / cell_size).floor() as i32 + 1).max(1);
        let rows = (((max_y - min_y) / cell_size).floor() as i32 + 1).max(1);
        GridIndex {
            cell_size,
            min_x,
            min_y,
            cols,
            rows,
            cells: vec![BTreeSet::new(); (cols * rows) as usize],
            position_cell: vec![None; fleet],
        }
    }

    fn cell_of(&self, x: f64, y: f64) -> i32 {
        let cx = (((x - self.min_x) / self.cell_size).floor() as i32).clamp(0, self.cols - 1);
        let cy = (((y - self.min_y) / self.cell_size).floor() as i32).clamp(0, self.rows - 1);
        cy * self.cols + cx
    }

    /// Records a vehicle position; cheap when the cell did not change.
    pub fn update(&mut self, vehicle: VehicleId, x: f64, y: f64) {
        let cell = self.cell_of(x, y);
        let old = self.position_cell[vehicle as usize];
        if old == Some(cell) {
            return;
        }
        if let Some(old) = old {
            self.cells[old as usize].remove(&vehicle);
        }
        self.cells[cell as usize].insert(vehicle);
        self.position_cell[vehicle as usize] = Some(cell);
    }

    /// Every vehicle indexed in a cell overlapping the square of the given
    /// radius around `(x, y)`, ascending by id. A superset of the vehicles
    /// within `radius` of the point.
    pub fn query(&self, x: f64, y: f64, radius: f64) -> Vec<VehicleId> {
        let lo_cx = (((x - radius - self.min_x) / self.cell_size).floor() as i32).clamp(0, self.cols - 1);
        let hi_cx = (((x + radius - self.min_x) / self.cell_size).floor() as i32).clamp(0, self.cols - 1);
        let lo_cy = (((y - radius - self.min_y) / self.cell_size).floor() as i32).clamp(0, self.rows - 1);
        let hi_cy = (((y + radius - self.min_y) / self.cell_size).floor() as i32).clamp(0, self.rows - 1);
        let mut out = BTreeSet::new();
        for cy in lo_cy..=hi_cy {
            for cx in lo_cx..=hi_cx {
                out.extend(&self.cells[(cy * self.cols + cx) as usize]);
            }
        }
        out.into_iter().collect()
    }

    pub fn cell_size(&self) -> f64 {
        self.cell_size
    }
}

/// One vehicle's offer for a request.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Bid {
    pub vehicle: VehicleId,
    pub cost: Cost,
}

/// Minimum-cost bid, ties to the smallest vehicle id.
pub fn select_winner(bids: &[Bid]) -> Option<Bid> {
    bids.iter().copied().min_by_key(|b| (b.cost, b.vehicle))
}

/// Candidate vehicles for a pickup: indexed vehicles within the waiting
/// radius plus `margin` (covers index staleness), or the whole fleet when
/// the network has no coordinates.
pub fn candidates(
    index: Option<&GridIndex>,
    coords: Option<&[(f64, f64)]>,
    pickup: VertexId,
    wait_ds: Cost,
    speed_mps: f64,
    margin_m: f64,
    fleet: usize,
) -> Vec<VehicleId> {
    match (index, coords) {
        (Some(index), Some(coords)) => {
            let (x, y) = coords[pickup as usize];
            index.query(x, y, wait_radius_m(wait_ds, speed_mps) + margin_m)
        }
        _ => (0..fleet as VehicleId).collect(),
    }
}
