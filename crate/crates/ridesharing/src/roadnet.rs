//! Road-network storage and shortest-path queries.
//!
//! The network is an undirected graph with strictly positive travel-time
//! weights (deciseconds). Queries go through a [`DistanceOracle`] that wraps
//! plain binary-heap Dijkstra behind two LRU caches: a large one for
//! distances and a smaller one for full paths. Both caches use the composite
//! key `id(s) * |V| + id(e)`, so `(s, e)` and `(e, s)` are distinct entries
//! even though the graph is undirected.
//!
//! A distance-cache miss runs one full single-source Dijkstra and stores the
//! whole row, since almost every workload that asks for `d(s, e)` soon asks
//! for more distances from the same source.

use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::fmt::Write as _;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use thiserror::Error;

use crate::cost::{Cost, INFINITE};
use crate::lru::LruCache;

/// Dense vertex identifier in `[0, vertex_count)`.
pub type VertexId = u32;

/// Default distance-cache capacity (entries).
pub const DEFAULT_DISTANCE_CACHE: usize = 10_000_000;
/// Default path-cache capacity (entries).
pub const DEFAULT_PATH_CACHE: usize = 10_000;

#[derive(Debug, Error)]
pub enum NetworkError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: weight must be a positive integer, got {weight}")]
    NonPositiveWeight { line: usize, weight: i64 },
    #[error("line {line}: vertex id {vertex} out of range (vertex count {count})")]
    VertexOutOfRange { line: usize, vertex: u64, count: u32 },
}

/// Undirected weighted road network; immutable once loaded.
#[derive(Debug, Clone)]
pub struct RoadNetwork {
    vertex_count: u32,
    edges: Vec<(VertexId, VertexId, Cost)>,
    adjacency: Vec<Vec<(VertexId, Cost)>>,
    coords: Option<Vec<(f64, f64)>>,
}

impl RoadNetwork {
    /// Builds a network from an edge list, deduplicating parallel edges by
    /// keeping the minimum weight.
    pub fn new(
        vertex_count: u32,
        raw_edges: impl IntoIterator<Item = (VertexId, VertexId, Cost)>,
    ) -> Self {
        let mut best = std::collections::HashMap::new();
        for (u, v, w) in raw_edges {
            assert!(u < vertex_count && v < vertex_count, "vertex id out of range");
            assert!(w > 0, "edge weight must be positive");
            let key = if u <= v { (u, v) } else { (v, u) };
            let entry = best.entry(key).or_insert(w);
            if w < *entry {
                *entry = w;
            }
        }
        let mut edges: Vec<(VertexId, VertexId, Cost)> =
            best.into_iter().map(|((u, v), w)| (u, v, w)).collect();
        edges.sort_unstable();
        let mut adjacency = vec![Vec::new(); vertex_count as usize];
        for &(u, v, w) in &edges {
            adjacency[u as usize].push((v, w));
            if u != v {
                adjacency[v as usize].push((u, w));
            }
        }
        for list in &mut adjacency {
            list.sort_unstable();
        }
        RoadNetwork { vertex_count, edges, adjacency, coords: None }
    }

    /// Parses the plain-text network format.
    ///
    /// First line `V E`, then `E` lines `u v w` with `w` in deciseconds.
    /// Optional trailing lines `c id x y` attach planar coordinates in
    /// meters, which the simulator's grid index needs; networks without them
    /// still load and simulate (the index then degrades to a single cell).
    pub fn parse(text: &str) -> Result<Self, NetworkError> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (line_no, header) = lines.next().ok_or(NetworkError::Parse {
            line: 1,
            message: "empty file".into(),
        })?;
        let mut it = header.split_whitespace();
        let vertex_count: u32 = parse_field(it.next(), line_no + 1, "vertex count")?;
        let edge_count: usize = parse_field(it.next(), line_no + 1, "edge count")?;

        let mut edges = Vec::with_capacity(edge_count);
        let mut coords: Option<Vec<(f64, f64)>> = None;
        let mut seen_edges = 0usize;
        for (idx, line) in lines {
            let line_no = idx + 1;
            let mut it = line.split_whitespace();
            let first = it.next().unwrap();
            if first == "c" {
                let coords = coords.get_or_insert_with(|| vec![(0.0, 0.0); vertex_count as usize]);
                let id: u64 = parse_field(it.next(), line_no, "coordinate vertex id")?;
                if id >= vertex_count as u64 {
                    return Err(NetworkError::VertexOutOfRange {
                        line: line_no,
                        vertex: id,
                        count: vertex_count,
                    });
                }
                let x: f64 = parse_field(it.next(), line_no, "x coordinate")?;
                let y: f64 = parse_field(it.next(), line_no, "y coordinate")?;
                coords[id as usize] = (x, y);
                continue;
            }
            if seen_edges == edge_count {
                return Err(NetworkError::Parse {
                    line: line_no,
                    message: "more edge lines than declared".into(),
                });
            }
            let u: u64 = parse_str(first, line_no, "edge endpoint")?;
            let v: u64 = parse_field(it.next(), line_no, "edge endpoint")?;
            let w: i64 = parse_field(it.next(), line_no, "edge weight")?;
            for &vertex in &[u, v] {
                if vertex >= vertex_count as u64 {
                    return Err(NetworkError::VertexOutOfRange {
                        line: line_no,
                        vertex,
                        count: vertex_count,
                    });
                }
            }
            if w <= 0 {
                return Err(NetworkError::NonPositiveWeight { line: line_no, weight: w });
            }
            edges.push((u as VertexId, v as VertexId, w as Cost));
            seen_edges += 1;
        }
        if seen_edges != edge_count {
            return Err(NetworkError::Parse {
                line: 0,
                message: format!("expected {edge_count} edges, found {seen_edges}"),
            });
        }
        let mut net = RoadNetwork::new(vertex_count, edges);
        net.coords = coords;
        Ok(net)
    }

    /// Generates an `n x m` grid with a uniform edge weight.
    ///
    /// Vertex `(row, col)` has id `row * m + col`. Coordinates place vertices
    /// `weight/10 * 14` meters apart, matching a constant 14 m/s speed.
    pub fn grid(rows: u32, cols: u32, weight: Cost) -> Self {
        assert!(rows > 0 && cols > 0 && weight > 0);
        let id = |r: u32, c: u32| r * cols + c;
        let mut edges = Vec::new();
        for r in 0..rows {
            for c in 0..cols {
                if c + 1 < cols {
                    edges.push((id(r, c), id(r, c + 1), weight));
                }
                if r + 1 < rows {
                    edges.push((id(r, c), id(r + 1, c), weight));
                }
            }
        }
        let mut net = RoadNetwork::new(rows * cols, edges);
        let spacing = weight as f64 / 10.0 * 14.0;
        net.coords = Some(
            (0..rows * cols)
                .map(|v| {
                    let (r, c) = (v / cols, v % cols);
                    (c as f64 * spacing, r as f64 * spacing)
                })
                .collect(),
        );
        net
    }

    /// Serializes to the plain-text file format, coordinates included.
    pub fn to_file_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{} {}", self.vertex_count, self.edges.len());
        for &(u, v, w) in &self.edges {
            let _ = writeln!(out, "{u} {v} {w}");
        }
        if let Some(coords) = &self.coords {
            for (id, (x, y)) in coords.iter().enumerate() {
                let _ = writeln!(out, "c {id} {x} {y}");
            }
        }
        out
    }

    pub fn vertex_count(&self) -> u32 {
        self.vertex_count
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(VertexId, VertexId, Cost)] {
        &self.edges
    }

    pub fn neighbors(&self, v: VertexId) -> &[(VertexId, Cost)] {
        &self.adjacency[v as usize]
    }

    /// Planar coordinates in meters, when the network carries them.
    pub fn coords(&self) -> Option<&[(f64, f64)]> {
        self.coords.as_deref()
    }

    pub fn max_edge_weight(&self) -> Cost {
        self.edges.iter().map(|&(_, _, w)| w).max().unwrap_or(0)
    }

    /// Single-source Dijkstra; returns the full distance row.
    pub fn dijkstra_from(&self, source: VertexId) -> Vec<Cost> {
        let mut dist = vec![INFINITE; self.vertex_count as usize];
        let mut heap = BinaryHeap::new();
        dist[source as usize] = 0;
        heap.push(Reverse((0, source)));
        while let Some(Reverse((d, v))) = heap.pop() {
            if d > dist[v as usize] {
                continue;
            }
            for &(to, w) in &self.adjacency[v as usize] {
                let nd = d + w;
                if nd < dist[to as usize] {
                    dist[to as usize] = nd;
                    heap.push(Reverse((nd, to)));
                }
            }
        }
        dist
    }

    /// Dijkstra with early exit and parent tracking; returns the vertex
    /// sequence from `source` to `target` and its cost.
    pub fn dijkstra_path(&self, source: VertexId, target: VertexId) -> Option<(Vec<VertexId>, Cost)> {
        if source == target {
            return Some((vec![source], 0));
        }
        let n = self.vertex_count as usize;
        let mut dist = vec![INFINITE; n];
        let mut parent = vec![u32::MAX; n];
        let mut heap = BinaryHeap::new();
        dist[source as usize] = 0;
        heap.push(Reverse((0, source)));
        while let Some(Reverse((d, v))) = heap.pop() {
            if v == target {
                let mut path = vec![target];
                let mut cur = target;
                while cur != source {
                    cur = parent[cur as usize];
                    path.push(cur);
                }
                path.reverse();
                return Some((path, d));
            }
            if d > dist[v as usize] {
                continue;
            }
            for &(to, w) in &self.adjacency[v as usize] {
                let nd = d + w;
                if nd < dist[to as usize]
                    || (nd == dist[to as usize] && v < parent[to as usize])
                {
                    // the tie rule keeps reconstructed paths deterministic
                    dist[to as usize] = nd;
                    parent[to as usize] = v;
                    heap.push(Reverse((nd, to)));
                }
            }
        }
        None
    }
}

fn parse_field<T: std::str::FromStr>(
    field: Option<&str>,
    line: usize,
    what: &str,
) -> Result<T, NetworkError> {
    let raw = field.ok_or_else(|| NetworkError::Parse {
        line,
        message: format!("missing {what}"),
    })?;
    parse_str(raw, line, what)
}

fn parse_str<T: std::str::FromStr>(raw: &str, line: usize, what: &str) -> Result<T, NetworkError> {
    raw.parse().map_err(|_| NetworkError::Parse {
        line,
        message: format!("invalid {what}: {raw:?}"),
    })
}

/// Shortest-distance and shortest-path provider with dual LRU caches.
///
/// Queries after construction only take `&self`; the caches sit behind
/// mutexes, so an oracle can be shared across worker threads. The network
/// itself is immutable.
pub struct DistanceOracle {
    net: Arc<RoadNetwork>,
    distances: Mutex<LruCache<Cost>>,
    paths: Mutex<LruCache<Arc<[VertexId]>>>,
    queries: AtomicU64,
    dijkstra_runs: AtomicU64,
}

impl DistanceOracle {
    pub fn new(net: Arc<RoadNetwork>) -> Self {
        Self::with_capacities(net, DEFAULT_DISTANCE_CACHE, DEFAULT_PATH_CACHE)
    }

    /// An oracle with explicit cache capacities; zero disables a cache.
    pub fn with_capacities(net: Arc<RoadNetwork>, distance_cap: usize, path_cap: usize) -> Self {
        DistanceOracle {
            net,
            distances: Mutex::new(LruCache::new(distance_cap)),
            paths: Mutex::new(LruCache::new(path_cap)),
            queries: AtomicU64::new(0),
            dijkstra_runs: AtomicU64::new(0),
        }
    }

    pub fn network(&self) -> &RoadNetwork {
        &self.net
    }

    pub fn network_arc(&self) -> Arc<RoadNetwork> {
        Arc::clone(&self.net)
    }

    /// Composite cache key `id(s) * |V| + id(e)`; asymmetric on purpose.
    pub fn cache_key(&self, s: VertexId, e: VertexId) -> u64 {
        s as u64 * self.net.vertex_count() as u64 + e as u64
    }

    /// Exact shortest-path cost from `s` to `e`; [`INFINITE`] if unreachable.
    pub fn distance(&self, s: VertexId, e: VertexId) -> Cost {
        self.queries.fetch_add(1, Ordering::Relaxed);
        if s == e {
            return 0;
        }
        let key = self.cache_key(s, e);
        if let Some(&d) = self.distances.lock().unwrap().get(key) {
            return d;
        }
        self.dijkstra_runs.fetch_add(1, Ordering::Relaxed);
        let row = self.net.dijkstra_from(s);
        let result = row[e as usize];
        let mut cache = self.distances.lock().unwrap();
        // Store the whole row: a miss from s makes further s-queries likely.
        if cache.capacity() >= self.net.vertex_count() as usize {
            let base = s as u64 * self.net.vertex_count() as u64;
            for (to, &d) in row.iter().enumerate() {
                cache.insert(base + to as u64, d);
            }
        } else {
            cache.insert(key, result);
        }
        result
    }

    /// Shortest path as a vertex sequence plus its cost; `None` when `e` is
    /// unreachable from `s`.
    pub fn path(&self, s: VertexId, e: VertexId) -> Option<(Arc<[VertexId]>, Cost)> {
        let key = self.cache_key(s, e);
        if let Some(p) = self.paths.lock().unwrap().get(key) {
            let cost = self.path_cost(p);
            return Some((Arc::clone(p), cost));
        }
        let (path, cost) = self.net.dijkstra_path(s, e)?;
        let path: Arc<[VertexId]> = path.into();
        self.paths.lock().unwrap().insert(key, Arc::clone(&path));
        self.distances.lock().unwrap().insert(key, cost);
        Some((path, cost))
    }

    fn path_cost(&self, path: &[VertexId]) -> Cost {
        path.windows(2)
            .map(|w| {
                self.net
                    .neighbors(w[0])
                    .iter()
                    .find(|&&(to, _)| to == w[1])
                    .map(|&(_, c)| c)
                    .unwrap_or(INFINITE)
            })
            .sum()
    }

    /// (queries answered, Dijkstra runs) since construction.
    pub fn stats(&self) -> (u64, u64) {
        (
            self.queries.load(Ordering::Relaxed),
            self.dijkstra_runs.load(Ordering::Relaxed),
        )
    }

    pub fn distance_cache_len(&self) -> usize {
        self.distances.lock().unwrap().len()
    }

    pub fn path_cache_len(&self) -> usize {
        self.paths.lock().unwrap().len()
    }
}
