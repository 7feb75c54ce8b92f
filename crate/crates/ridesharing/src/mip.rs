//! Mixed-integer model generation for a rescheduling instance.
//!
//! The model minimizes total successor-arc cost over binary variables
//! `y_ij`, arrival times `B_i`, and ride times `L_i`, on the node set
//! `N = {0} ∪ D' ∪ P ∪ D`: node 0 is the vehicle position, `D'` the dropoffs
//! of passengers already on board, `P` the pickups still pending, and `D`
//! their matching dropoffs (`pickup i` pairs with `dropoff i + n`). The
//! conditional timing constraint is linearized Miller-Tucker-Zemlin style
//! with the tightest valid big-M, `M_ij = max(0, l_i + d_ij - e_j)` over the
//! per-node time windows `[e_i, l_i]`.
//!
//! No external solver is involved: an internal enumerator over
//! Hamiltonian-path successor assignments solves the model exactly for test
//! purposes, and [`emit_lp`] writes solver-standard LP text so the model can
//! be handed to a real solver. The emitted text is deterministic and
//! round-trips bit-exactly through [`parse_lp`].
//!
//! Unlimited budgets are clamped to a horizon no simple path can exceed, so
//! every coefficient stays a small integer. Seat limits are not part of the
//! formulation; instances fed to this module should leave `max_onboard`
//! unset.

use std::fmt::Write as _;

use thiserror::Error;

use crate::cost::{Cost, INFINITE};
use crate::instance::ReschedulingInstance;
use crate::roadnet::DistanceOracle;
use crate::trips::Waypoint;

#[derive(Debug, Error)]
pub enum MipError {
    #[error("model is infeasible (unreachable leg or empty time window)")]
    Infeasible,
    #[error("assignment has wrong dimensions: {0}")]
    IncompleteAssignment(String),
    #[error("lp parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
}

/// Variable identifier inside the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarId {
    /// Successor arc i -> j.
    Y(usize, usize),
    /// Arrival time at node i.
    B(usize),
    /// Ride time of the trip dropped at node i (i in D).
    L(usize),
}

impl VarId {
    fn name(&self) -> String {
        match self {
            VarId::Y(i, j) => format!("y_{i}_{j}"),
            VarId::B(i) => format!("B_{i}"),
            VarId::L(i) => format!("L_{i}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cmp {
    Le,
    Ge,
    Eq,
}

impl Cmp {
    fn symbol(&self) -> &'static str {
        match self {
            Cmp::Le => "<=",
            Cmp::Ge => ">=",
            Cmp::Eq => "=",
        }
    }
}

/// One linear constraint row `sum(coef * var) cmp rhs`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Row {
    pub name: String,
    pub terms: Vec<(i64, VarId)>,
    pub cmp: Cmp,
    pub rhs: i64,
}

/// The generated model plus the instance metadata it was built from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MipModel {
    /// |N|, node 0 included.
    pub node_count: usize,
    /// |D'|: dropoffs of onboard passengers.
    pub k: usize,
    /// |P| = |D|: pending pickups.
    pub n: usize,
    /// Waypoint behind each node; `None` for node 0.
    pub node_waypoints: Vec<Option<Waypoint>>,
    /// Cost matrix; `d[i][i]` is set to 1 so a self-loop can never pay off.
    pub d: Vec<Vec<Cost>>,
    /// Tightest valid big-M per arc.
    pub big_m: Vec<Vec<Cost>>,
    /// Time windows `[e_i, l_i]` per node.
    pub windows: Vec<(Cost, Cost)>,
    pub objective: Vec<(i64, VarId)>,
    pub rows: Vec<Row>,
    /// Set when an unreachable leg or empty window rules out any schedule.
    pub infeasible: bool,
}

impl MipModel {
    fn pickup_of(&self, dropoff: usize) -> usize {
        debug_assert!(self.is_d(dropoff));
        dropoff - self.n
    }

    fn is_p(&self, i: usize) -> bool {
        i > self.k && i <= self.k + self.n
    }

    fn is_d(&self, i: usize) -> bool {
        i > self.k + self.n
    }

    fn is_d_prime(&self, i: usize) -> bool {
        i >= 1 && i <= self.k
    }

    /// Count of y/B/L variables.
    pub fn variable_count(&self) -> usize {
        self.node_count * self.node_count + self.node_count + self.n
    }

    /// Checks a complete assignment against every row, then verifies that
    /// `y` encodes one path from node 0 covering all nodes.
    pub fn check_solution(
        &self,
        y: &[Vec<bool>],
        b: &[Cost],
        l: &[Cost],
    ) -> Result<bool, MipError> {
        let n = self.node_count;
        if y.len() != n || y.iter().any(|row| row.len() != n) {
            return Err(MipError::IncompleteAssignment(format!("y must be {n}x{n}")));
        }
        if b.len() != n {
            return Err(MipError::IncompleteAssignment(format!("B must have {n} entries")));
        }
        if l.len() != self.n {
            return Err(MipError::IncompleteAssignment(format!(
                "L must have {} entries",
                self.n
            )));
        }
        let value = |var: &VarId| -> i128 {
            match *var {
                VarId::Y(i, j) => y[i][j] as i128,
                VarId::B(i) => b[i] as i128,
                VarId::L(i) => l[i - self.k - self.n - 1] as i128,
            }
        };
        for row in &self.rows {
            let lhs: i128 = row.terms.iter().map(|(c, v)| *c as i128 * value(v)).sum();
            let ok = match row.cmp {
                Cmp::Le => lhs <= row.rhs as i128,
                Cmp::Ge => lhs >= row.rhs as i128,
                Cmp::Eq => lhs == row.rhs as i128,
            };
            if !ok {
                return Ok(false);
            }
        }
        // successor structure: a single path from node 0 over all nodes
        let mut succ = vec![None; n];
        for i in 0..n {
            for j in 0..n {
                if y[i][j] {
                    if succ[i].is_some() {
                        return Ok(false);
                    }
                    succ[i] = Some(j);
                }
            }
        }
        let mut visited = vec![false; n];
        let mut at = 0usize;
        visited[0] = true;
        let mut count = 1;
        while let Some(next) = succ[at] {
            if visited[next] {
                return Ok(false);
            }
            visited[next] = true;
            count += 1;
            at = next;
        }
        Ok(count == n)
    }

    /// Exact optimum by exhaustive enumeration of Hamiltonian successor
    /// paths from node 0, pruning on the waiting/ride rows as arrival times
    /// accumulate. Returns the objective and the node order.
    pub fn solve_exact(&self) -> Option<(Cost, Vec<usize>)> {
        if self.infeasible {
            return None;
        }
        if self.node_count == 1 {
            return Some((0, vec![0]));
        }
        struct Search<'a> {
            model: &'a MipModel,
            best: Option<(Cost, Vec<usize>)>,
        }
        impl Search<'_> {
            fn go(&mut self, path: &mut Vec<usize>, arrivals: &mut Vec<Cost>, cost: Cost) {
                let m = self.model;
                if path.len() == m.node_count {
                    if self.best.as_ref().map_or(true, |(c, _)| cost < *c) {
                        self.best = Some((cost, path.clone()));
                    }
                    return;
                }
                let at = *path.last().unwrap();
                for next in 1..m.node_count {
                    if path.contains(&next) {
                        continue;
                    }
                    if m.is_d(next) && !path.contains(&m.pickup_of(next)) {
                        continue; // dropoff before its pickup
                    }
                    let arrive = cost + m.d[at][next];
                    let feasible = if m.is_p(next) || m.is_d_prime(next) {
                        arrive <= m.windows[next].1
                    } else {
                        let pickup = m.pickup_of(next);
                        let ride = arrive - arrivals[pickup];
                        let lb = m.d[pickup][next];
                        let ub = m.ride_cap(next);
                        ride >= lb && ride <= ub
                    };
                    if !feasible {
                        continue;
                    }
                    path.push(next);
                    arrivals[next] = arrive;
                    self.go(path, arrivals, arrive);
                    path.pop();
                }
            }
        }
        let mut search = Search { model: self, best: None };
        let mut arrivals = vec![0; self.node_count];
        search.go(&mut vec![0], &mut arrivals, 0);
        search.best
    }

    fn ride_cap(&self, dropoff: usize) -> Cost {
        debug_assert!(self.is_d(dropoff));
        // upper bound of row (9) for this dropoff
        self.rows
            .iter()
            .find_map(|r| match (r.name.strip_prefix("ridemax_"), &r.terms[..]) {
                (Some(idx), [(1, VarId::L(i))]) if idx == dropoff.to_string() => {
                    debug_assert_eq!(*i, dropoff);
                    Some(r.rhs as Cost)
                }
                _ => None,
            })
            .unwrap_or(INFINITE)
    }
}

/// Builds the model for one rescheduling instance.
pub fn build_model(oracle: &DistanceOracle, inst: &ReschedulingInstance) -> MipModel {
    let onboard = {
        let mut v = inst.onboard.clone();
        v.sort_by_key(|t| t.trip);
        v
    };
    let waiting = inst.waiting_with_new(oracle);
    let k = onboard.len();
    let n = waiting.len();
    let count = 1 + k + 2 * n;

    let mut node_waypoints: Vec<Option<Waypoint>> = vec![None];
    for ob in &onboard {
        node_waypoints.push(Some(Waypoint::dropoff(ob.trip, ob.dropoff)));
    }
    for wt in &waiting {
        node_waypoints.push(Some(Waypoint::pickup(wt.trip, wt.pickup)));
    }
    for wt in &waiting {
        node_waypoints.push(Some(Waypoint::dropoff(wt.trip, wt.dropoff)));
    }

    let vertex = |i: usize| match &node_waypoints[i] {
        None => inst.start,
        Some(w) => w.vertex,
    };

    let mut infeasible = false;
    let mut d = vec![vec![0; count]; count];
    let mut raw_max = 0;
    for i in 0..count {
        for j in 0..count {
            d[i][j] = if i == j {
                1
            } else {
                let mut dist = oracle.distance(vertex(i), vertex(j));
                if i == 0 {
                    dist = dist.saturating_add(inst.start_extra);
                }
                dist
            };
            if d[i][j] == INFINITE {
                infeasible = true;
            } else if d[i][j] > raw_max {
                raw_max = d[i][j];
            }
        }
    }
    // Horizon: longer than any simple path, used to clamp unlimited budgets.
    let horizon: Cost = raw_max * count as Cost + 1;
    let clamp = |c: Cost| c.min(horizon);
    if infeasible {
        for row in &mut d {
            for v in row.iter_mut() {
                *v = clamp(*v);
            }
        }
    }

    // Per-node windows [e_i, l_i].
    let mut windows = vec![(0, 0); count];
    for (idx, ob) in onboard.iter().enumerate() {
        let i = 1 + idx;
        windows[i] = (d[0][i], clamp(ob.ride_budget));
    }
    for (idx, wt) in waiting.iter().enumerate() {
        let p = 1 + k + idx;
        let dr = p + n;
        windows[p] = (d[0][p], clamp(wt.wait_budget));
        windows[dr] = (
            d[0][p].saturating_add(d[p][dr]),
            clamp(wt.wait_budget).saturating_add(clamp(wt.ride_budget)),
        );
    }
    for &(e, l) in &windows[1..] {
        if l < e {
            infeasible = true;
        }
    }

    let mut big_m = vec![vec![0; count]; count];
    for i in 0..count {
        for j in 0..count {
            let l_i = windows[i].1 as i128;
            let e_j = windows[j].0 as i128;
            let m = (l_i + d[i][j] as i128 - e_j).max(0);
            big_m[i][j] = m as Cost;
        }
    }

    let mut objective = Vec::new();
    for i in 0..count {
        for j in 0..count {
            objective.push((d[i][j] as i64, VarId::Y(i, j)));
        }
    }

    let mut rows = Vec::new();
    // (2) exactly one predecessor for every node but 0
    for i in 1..count {
        rows.push(Row {
            name: format!("indeg_{i}"),
            terms: (0..count).map(|j| (1, VarId::Y(j, i))).collect(),
            cmp: Cmp::Eq,
            rhs: 1,
        });
    }
    // (3) exactly one successor of node 0
    rows.push(Row {
        name: "outdeg_0".into(),
        terms: (0..count).map(|j| (1, VarId::Y(0, j))).collect(),
        cmp: Cmp::Eq,
        rhs: 1,
    });
    // (4) the clock starts at zero
    rows.push(Row { name: "start_time".into(), terms: vec![(1, VarId::B(0))], cmp: Cmp::Eq, rhs: 0 });
    // (5) linearized: B_j - B_i - M_ij y_ij >= d_ij - M_ij
    for i in 0..count {
        for j in 0..count {
            rows.push(Row {
                name: format!("timing_{i}_{j}"),
                terms: vec![
                    (1, VarId::B(j)),
                    (-1, VarId::B(i)),
                    (-(big_m[i][j] as i64), VarId::Y(i, j)),
                ],
                cmp: Cmp::Ge,
                rhs: d[i][j] as i64 - big_m[i][j] as i64,
            });
        }
    }
    // (6) ride time of pending trips
    for idx in 0..n {
        let dr = 1 + k + n + idx;
        let p = 1 + k + idx;
        rows.push(Row {
            name: format!("ridedef_{dr}"),
            terms: vec![(1, VarId::L(dr)), (-1, VarId::B(dr)), (1, VarId::B(p))],
            cmp: Cmp::Eq,
            rhs: 0,
        });
    }
    // (7) waiting limits of pending pickups
    for (idx, wt) in waiting.iter().enumerate() {
        let p = 1 + k + idx;
        rows.push(Row {
            name: format!("waitcap_{p}"),
            terms: vec![(1, VarId::B(p))],
            cmp: Cmp::Le,
            rhs: clamp(wt.wait_budget) as i64,
        });
    }
    // (8) remaining ride budgets of onboard passengers
    for (idx, ob) in onboard.iter().enumerate() {
        let i = 1 + idx;
        rows.push(Row {
            name: format!("ridecap_{i}"),
            terms: vec![(1, VarId::B(i))],
            cmp: Cmp::Le,
            rhs: clamp(ob.ride_budget) as i64,
        });
    }
    // (9) pending ride times between shortest ride and allowed ride
    for (idx, wt) in waiting.iter().enumerate() {
        let dr = 1 + k + n + idx;
        let p = 1 + k + idx;
        rows.push(Row {
            name: format!("ridemin_{dr}"),
            terms: vec![(1, VarId::L(dr))],
            cmp: Cmp::Ge,
            rhs: d[p][dr] as i64,
        });
        rows.push(Row {
            name: format!("ridemax_{dr}"),
            terms: vec![(1, VarId::L(dr))],
            cmp: Cmp::Le,
            rhs: clamp(wt.ride_budget) as i64,
        });
    }

    MipModel {
        node_count: count,
        k,
        n,
        node_waypoints,
        d,
        big_m,
        windows,
        objective,
        rows,
        infeasible,
    }
}

/// The textual content of an emitted model; what [`parse_lp`] returns.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LpFile {
    pub objective: Vec<(i64, String)>,
    pub rows: Vec<LpRow>,
    pub binaries: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LpRow {
    pub name: String,
    pub terms: Vec<(i64, String)>,
    pub cmp: Cmp,
    pub rhs: i64,
}

impl MipModel {
    pub fn to_lp_file(&self) -> LpFile {
        LpFile {
            objective: self.objective.iter().map(|(c, v)| (*c, v.name())).collect(),
            rows: self
                .rows
                .iter()
                .map(|r| LpRow {
                    name: r.name.clone(),
                    terms: r.terms.iter().map(|(c, v)| (*c, v.name())).collect(),
                    cmp: r.cmp,
                    rhs: r.rhs,
                })
                .collect(),
            binaries: (0..self.node_count)
                .flat_map(|i| (0..self.node_count).map(move |j| format!("y_{i}_{j}")))
                .collect(),
        }
    }
}

fn write_terms(out: &mut String, terms: &[(i64, String)]) {
    for (idx, (coef, var)) in terms.iter().enumerate() {
        if idx == 0 {
            if *coef < 0 {
                let _ = write!(out, "- {} {}", coef.unsigned_abs(), var);
            } else {
                let _ = write!(out, "{coef} {var}");
            }
        } else if *coef < 0 {
            let _ = write!(out, " - {} {}", coef.unsigned_abs(), var);
        } else {
            let _ = write!(out, " + {coef} {var}");
        }
    }
}

/// Emits deterministic, solver-standard LP text.
pub fn emit_lp(model: &MipModel) -> Result<String, MipError> {
    if model.infeasible {
        return Err(MipError::Infeasible);
    }
    Ok(emit_lp_file(&model.to_lp_file()))
}

pub fn emit_lp_file(lp: &LpFile) -> String {
    let mut out = String::new();
    out.push_str("Minimize\n obj: ");
    write_terms(&mut out, &lp.objective);
    out.push_str("\nSubject To\n");
    for row in &lp.rows {
        let _ = write!(out, " {}: ", row.name);
        write_terms(&mut out, &row.terms);
        let _ = writeln!(out, " {} {}", row.cmp.symbol(), row.rhs);
    }
    out.push_str("Binaries\n");
    for name in &lp.binaries {
        let _ = writeln!(out, " {name}");
    }
    out.push_str("End\n");
    out
}

/// Strict reader for the exact dialect [`emit_lp`] writes.
pub fn parse_lp(text: &str) -> Result<LpFile, MipError> {
    #[derive(PartialEq)]
    enum Section {
        Start,
        Objective,
        Rows,
        Binaries,
        Done,
    }
    let err = |line: usize, message: &str| MipError::Parse { line, message: message.into() };
    let mut section = Section::Start;
    let mut objective = Vec::new();
    let mut rows = Vec::new();
    let mut binaries = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        match line {
            "Minimize" => {
                section = Section::Objective;
                continue;
            }
            "Subject To" => {
                section = Section::Rows;
                continue;
            }
            "Binaries" => {
                section = Section::Binaries;
                continue;
            }
            "End" => {
                section = Section::Done;
                continue;
            }
            _ => {}
        }
        match section {
            Section::Objective => {
                let body = line
                    .strip_prefix("obj:")
                    .ok_or_else(|| err(line_no, "objective must be named obj"))?;
                objective = parse_terms(body.trim(), line_no)?;
            }
            Section::Rows => {
                let colon = line.find(':').ok_or_else(|| err(line_no, "missing row name"))?;
                let name = line[..colon].trim().to_string();
                let body = line[colon + 1..].trim();
                let (cmp, split_at, sym_len) = if let Some(p) = body.find("<=") {
                    (Cmp::Le, p, 2)
                } else if let Some(p) = body.find(">=") {
                    (Cmp::Ge, p, 2)
                } else if let Some(p) = body.find('=') {
                    (Cmp::Eq, p, 1)
                } else {
                    return Err(err(line_no, "missing comparison"));
                };
                let terms = parse_terms(body[..split_at].trim(), line_no)?;
                let rhs: i64 = body[split_at + sym_len..]
                    .trim()
                    .parse()
                    .map_err(|_| err(line_no, "invalid right-hand side"))?;
                rows.push(LpRow { name, terms, cmp, rhs });
            }
            Section::Binaries => binaries.push(line.to_string()),
            Section::Start | Section::Done => {
                return Err(err(line_no, "unexpected content"));
            }
        }
    }
    if section != Section::Done {
        return Err(err(0, "missing End marker"));
    }
    Ok(LpFile { objective, rows, binaries })
}

fn parse_terms(body: &str, line_no: usize) -> Result<Vec<(i64, String)>, MipError> {
    let err = |message: &str| MipError::Parse { line: line_no, message: message.into() };
    let tokens: Vec<&str> = body.split_whitespace().collect();
    let mut terms = Vec::new();
    let mut i = 0;
    let mut sign = 1i64;
    while i < tokens.len() {
        match tokens[i] {
            "+" => {
                sign = 1;
                i += 1;
            }
            "-" => {
                sign = -1;
                i += 1;
            }
            coef => {
                let c: i64 = coef.parse().map_err(|_| err("invalid coefficient"))?;
                let var = tokens.get(i + 1).ok_or_else(|| err("missing variable name"))?;
                terms.push((sign * c, var.to_string()));
                sign = 1;
                i += 2;
            }
        }
    }
    Ok(terms)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::roadnet::RoadNetwork;
    use crate::trips::{TripId, TripRequest};
    use std::sync::Arc;

    fn oracle() -> DistanceOracle {
        DistanceOracle::new(Arc::new(RoadNetwork::grid(5, 5, 10)))
    }

    fn one_trip_instance() -> ReschedulingInstance {
        let mut inst = ReschedulingInstance::at(0);
        inst.new_trip = Some(TripRequest {
            id: TripId(1),
            source: 1,
            destination: 3,
            request_time: 0,
            max_wait: 600,
            detour_bp: 2_000,
        });
        inst
    }

    #[test]
    fn single_trip_model_shape() {
        let o = oracle();
        let model = build_model(&o, &one_trip_instance());
        assert_eq!(model.node_count, 3);
        // y over 3x3 = 9 variables
        assert_eq!(model.objective.len(), 9);
        assert_eq!(model.variable_count(), 9 + 3 + 1);
        let (cost, order) = model.solve_exact().unwrap();
        // forced tour 0 -> pickup -> dropoff
        assert_eq!(order, vec![0, 1, 2]);
        assert_eq!(cost, o.distance(0, 1) + o.distance(1, 3));
    }

    #[test]
    fn d_diagonal_is_positive() {
        let o = oracle();
        let model = build_model(&o, &one_trip_instance());
        for i in 0..model.node_count {
            assert!(model.d[i][i] > 0);
        }
    }

    #[test]
    fn emitted_text_round_trips() {
        let o = oracle();
        let model = build_model(&o, &one_trip_instance());
        let text = emit_lp(&model).unwrap();
        let parsed = parse_lp(&text).unwrap();
        assert_eq!(parsed, model.to_lp_file());
        assert_eq!(emit_lp_file(&parsed), text);
    }

    #[test]
    fn variable_names_are_unique() {
        let o = oracle();
        let model = build_model(&o, &one_trip_instance());
        let lp = model.to_lp_file();
        let mut names: Vec<&String> = lp.binaries.iter().collect();
        names.sort();
        names.dedup();
        assert_eq!(names.len(), lp.binaries.len());
    }

    #[test]
    fn self_loop_fails_check() {
        let o = oracle();
        let model = build_model(&o, &one_trip_instance());
        let n = model.node_count;
        let mut y = vec![vec![false; n]; n];
        y[0][0] = true;
        y[1][1] = true;
        y[2][2] = true;
        let b = vec![0; n];
        let l = vec![model.d[1][2]];
        assert!(matches!(model.check_solution(&y, &b, &l), Ok(false)));
    }

    #[test]
    fn incomplete_assignment_errors() {
        let o = oracle();
        let model = build_model(&o, &one_trip_instance());
        let y = vec![vec![false; 2]; 2];
        assert!(model.check_solution(&y, &[0; 3], &[0]).is_err());
    }

    #[test]
    fn unreachable_leg_marks_infeasible() {
        let net = RoadNetwork::parse("4 2\n0 1 5\n2 3 5\n").unwrap();
        let o = DistanceOracle::new(Arc::new(net));
        let mut inst = ReschedulingInstance::at(0);
        inst.new_trip = Some(TripRequest {
            id: TripId(1),
            source: 2,
            destination: 3,
            request_time: 0,
            max_wait: 600,
            detour_bp: 0,
        });
        let model = build_model(&o, &inst);
        assert!(model.infeasible);
        assert!(model.solve_exact().is_none());
        assert!(emit_lp(&model).is_err());
    }
}
