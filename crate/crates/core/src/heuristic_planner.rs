//! Shortest-path queries over a learned feature matrix.
//!
//! Start and target are attached to every feature they see along a clear
//! segment, then a dense Dijkstra search runs backward from the target over
//! the feature graph. Cost is accumulated edge by edge from the target end, and
//! the search touches each matrix entry at most once, so a query costs
//! `O(K²)` for `K` features.

use crate::feature_learning::{collision_free_link, FeatureMatrix};
use crate::grid::{Cell, GridSpec};
use crate::neural_field::NeuralField;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum PlanError {
    #[error("endpoint {0:?} lies on negative activity")]
    BlockedEndpoint(Cell),
    #[error("no feature neuron is reachable from {0:?} along a clear segment")]
    Attachment(Cell),
    #[error("start and target lie in disconnected parts of the feature graph")]
    NoPath,
    #[error("feature matrix is {matrix}x{matrix} but {features} features were given")]
    SizeMismatch { matrix: usize, features: usize },
}

/// Work done by one search.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SearchStats {
    /// Nodes settled.
    pub expanded_nodes: usize,
    /// Adjacency entries inspected while relaxing settled nodes.
    pub scanned_entries: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeuristicPath {
    /// Start, the feature cells passed, target.
    pub waypoints: Vec<Cell>,
    /// Meters.
    pub length: f64,
    pub stats: SearchStats,
}

impl HeuristicPath {
    /// Sum of the metric segment lengths.
    pub fn segment_sum(&self, grid: &GridSpec) -> f64 {
        self.waypoints
            .windows(2)
            .map(|w| grid.distance(w[0], w[1]))
            .sum()
    }
}

/// A query against a frozen snapshot of features, matrix and field.
#[derive(Debug, Clone, Copy)]
pub struct PlanQuery<'a> {
    pub start: Cell,
    pub target: Cell,
    pub features: &'a [Cell],
    pub matrix: &'a FeatureMatrix,
    pub field: &'a NeuralField,
}

/// Index of the nearest feature joined to `cell` by a clear segment. Equal
/// distances resolve by row-major order of the feature cells.
pub fn attach_endpoint(cell: Cell, features: &[Cell], field: &NeuralField) -> Result<usize, PlanError> {
    if field.activity(cell) < 0.0 {
        return Err(PlanError::BlockedEndpoint(cell));
    }
    let mut order: Vec<usize> = (0..features.len()).collect();
    order.sort_by(|&a, &b| {
        let (fa, fb) = (features[a], features[b]);
        fa.distance_cells(cell)
            .total_cmp(&fb.distance_cells(cell))
            .then(fa.row_major_key().cmp(&fb.row_major_key()))
    });
    order
        .into_iter()
        .find(|&i| collision_free_link(features[i], cell, field))
        .ok_or(PlanError::Attachment(cell))
}

/// Dense Dijkstra from `source` over a symmetric matrix where entries `> 0`
/// are edges. Returns distances to `source` and the next hop toward it.
fn dense_dijkstra(m: &FeatureMatrix, source: usize) -> (Vec<f64>, Vec<Option<usize>>, SearchStats) {
    let n = m.size();
    let mut dist = vec![f64::INFINITY; n];
    let mut next = vec![None; n];
    let mut done = vec![false; n];
    let mut stats = SearchStats::default();
    dist[source] = 0.0;
    loop {
        let mut u = None;
        for v in 0..n {
            if !done[v] && dist[v].is_finite() && u.map_or(true, |b: usize| dist[v] < dist[b]) {
                u = Some(v);
            }
        }
        let Some(u) = u else { break };
        done[u] = true;
        stats.expanded_nodes += 1;
        for (v, &w) in m.row(u).iter().enumerate() {
            stats.scanned_entries += 1;
            if w > 0.0 && !done[v] {
                let cand = dist[u] + w;
                if cand < dist[v] {
                    dist[v] = cand;
                    next[v] = Some(u);
                }
            }
        }
    }
    (dist, next, stats)
}

/// Shortest route between two feature indices over the matrix alone,
/// searched backward from `to`. Returns the index sequence from `from`.
pub fn shortest_feature_route(
    m: &FeatureMatrix,
    from: usize,
    to: usize,
) -> Option<(Vec<usize>, f64, SearchStats)> {
    let (dist, next, stats) = dense_dijkstra(m, to);
    if !dist[from].is_finite() {
        return None;
    }
    let mut route = vec![from];
    let mut at = from;
    while at != to {
        at = next[at]?;
        route.push(at);
    }
    Some((route, dist[from], stats))
}

/// Plans from `start` to `target` over the feature graph. Each endpoint joins
/// the graph through every clear segment to a feature, and the two are also
/// joined directly when that segment is clear.
pub fn plan_via_matrix(q: &PlanQuery<'_>) -> Result<HeuristicPath, PlanError> {
    let k = q.features.len();
    if q.matrix.size() != k {
        return Err(PlanError::SizeMismatch {
            matrix: q.matrix.size(),
            features: k,
        });
    }
    let grid = *q.field.grid();
    for c in [q.start, q.target] {
        if q.field.activity(c) < 0.0 {
            return Err(PlanError::BlockedEndpoint(c));
        }
    }
    let direct = q.start != q.target && collision_free_link(q.start, q.target, q.field);
    let visible = |c: Cell| -> Vec<usize> {
        (0..k)
            .filter(|&i| collision_free_link(q.features[i], c, q.field))
            .collect()
    };
    let (sv, tv) = (visible(q.start), visible(q.target));
    if !direct && q.start != q.target {
        for (c, v) in [(q.start, &sv), (q.target, &tv)] {
            if v.is_empty() {
                return Err(PlanError::Attachment(c));
            }
        }
    }

    let (s, t) = (k, k + 1);
    let mut aug = FeatureMatrix::zeros(k + 2);
    for g in 0..k {
        for h in g + 1..k {
            let w = q.matrix.get(g, h);
            if w > 0.0 {
                aug.set_symmetric(g, h, w);
            }
        }
    }
    // Zero-length attachments still need an edge; a tiny positive weight
    // keeps them in the graph without changing any sum.
    let edge = |a: Cell, b: Cell| grid.distance(a, b).max(f64::MIN_POSITIVE);
    for &i in &sv {
        aug.set_symmetric(s, i, edge(q.start, q.features[i]));
    }
    for &i in &tv {
        aug.set_symmetric(t, i, edge(q.target, q.features[i]));
    }
    if direct {
        aug.set_symmetric(s, t, grid.distance(q.start, q.target));
    }

    let (route, _, stats) = if q.start == q.target {
        (vec![s, t], 0.0, SearchStats::default())
    } else {
        shortest_feature_route(&aug, s, t).ok_or(PlanError::NoPath)?
    };
    let cell_of = |i: usize| match i {
        i if i == s => q.start,
        i if i == t => q.target,
        i => q.features[i],
    };
    let mut waypoints: Vec<Cell> = Vec::with_capacity(route.len());
    for &i in &route {
        let c = cell_of(i);
        if waypoints.last() != Some(&c) {
            waypoints.push(c);
        }
    }
    if waypoints.len() == 1 {
        waypoints.push(q.target);
    }
    let length = waypoints
        .windows(2)
        .rev()
        .map(|w| grid.distance(w[0], w[1]))
        .fold(0.0, |acc, d| acc + d);
    Ok(HeuristicPath {
        waypoints,
        length,
        stats,
    })
}
