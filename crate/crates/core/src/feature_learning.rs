//! Online extraction of feature neurons from robot trajectories.
//!
//! A trajectory cell becomes a candidate when the robot turns there by more
//! than the angular threshold. Candidates must lie farther than `th1` from
//! every existing feature and on non-negative activity. Features with more
//! than `fusion_degree` clear links that sit closer than `th2` to one another
//! are fused. Every non-negative cell is represented by the nearest feature
//! it can reach along a clear straight segment, and the clear-segment
//! distances between features form the feature matrix used for fast
//! replanning. Once every cell is represented, further candidates are only
//! admitted when they join parts of the feature graph that share a free
//! region but have no route between them.
//!
//! "Clear" always means: every cell touched by the segment has `ζ ≥ 0` in the
//! field passed in, so the safety halo around obstacles is respected.

use crate::grid::{supercover_for_each, wrap_angle, Cell, GridSpec};
use crate::neural_field::NeuralField;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureParams {
    /// Turning-angle threshold in degrees.
    pub th_theta_deg: f64,
    /// Minimum spacing to existing features, meters.
    pub th1: f64,
    /// Fusion distance, meters.
    pub th2: f64,
    /// Features with more clear links than this take part in fusion.
    pub fusion_degree: usize,
}

impl Default for FeatureParams {
    fn default() -> Self {
        FeatureParams {
            th_theta_deg: 30.0,
            th1: 3.0,
            th2: 5.0,
            fusion_degree: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureNeuron {
    pub cell: Cell,
    /// Cells for which this is the nearest clearly reachable feature.
    pub represented: Vec<Cell>,
    /// Number of clear links to other features.
    pub degree: usize,
    /// Mean distance to the represented cells, meters.
    pub mean_distance: Option<f64>,
}

impl FeatureNeuron {
    pub fn new(cell: Cell) -> Self {
        FeatureNeuron {
            cell,
            represented: Vec::new(),
            degree: 0,
            mean_distance: None,
        }
    }
}

/// Symmetric matrix of clear-link distances between features, 0 where no link.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FeatureMatrix {
    size: usize,
    data: Vec<f64>,
}

impl FeatureMatrix {
    pub fn zeros(size: usize) -> Self {
        FeatureMatrix {
            size,
            data: vec![0.0; size * size],
        }
    }

    /// Builds a matrix from rows. Fails unless square, symmetric, zero on the
    /// diagonal and non-negative.
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self, FeatureError> {
        let size = rows.len();
        let mut m = FeatureMatrix::zeros(size);
        for (g, row) in rows.iter().enumerate() {
            if row.len() != size {
                return Err(FeatureError::MalformedMatrix("matrix is not square"));
            }
            for (h, &v) in row.iter().enumerate() {
                if !(v.is_finite() && v >= 0.0) {
                    return Err(FeatureError::MalformedMatrix("entries must be finite and non-negative"));
                }
                m.data[g * size + h] = v;
            }
        }
        for g in 0..size {
            if m.get(g, g) != 0.0 {
                return Err(FeatureError::MalformedMatrix("diagonal must be zero"));
            }
            for h in 0..g {
                if m.get(g, h) != m.get(h, g) {
                    return Err(FeatureError::MalformedMatrix("matrix is not symmetric"));
                }
            }
        }
        Ok(m)
    }

    #[inline]
    pub fn size(&self) -> usize {
        self.size
    }

    #[inline]
    pub fn get(&self, g: usize, h: usize) -> f64 {
        self.data[g * self.size + h]
    }

    pub fn set_symmetric(&mut self, g: usize, h: usize, v: f64) {
        self.data[g * self.size + h] = v;
        self.data[h * self.size + g] = v;
    }

    pub fn row(&self, g: usize) -> &[f64] {
        &self.data[g * self.size..(g + 1) * self.size]
    }

    pub fn degree(&self, g: usize) -> usize {
        self.row(g).iter().filter(|&&v| v > 0.0).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Representativeness {
    pub ratio: f64,
    pub represented: usize,
    /// Cells with non-negative activity.
    pub total: usize,
}

impl Representativeness {
    pub fn is_complete(&self) -> bool {
        self.total > 0 && self.represented == self.total
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FeatureError {
    #[error("no cell has non-negative activity; representativeness is undefined")]
    NoFreeCells,
    #[error("malformed feature matrix: {0}")]
    MalformedMatrix(&'static str),
}

/// Yields `cell` when the wrapped heading change exceeds `th_theta` (radians).
pub fn angle_candidate(prev_heading: f64, curr_heading: f64, cell: Cell, th_theta: f64) -> Option<Cell> {
    let turn = wrap_angle(curr_heading - prev_heading).abs();
    (turn > th_theta).then_some(cell)
}

/// Accepts a candidate lying farther than `th1` from every existing feature.
pub fn distance_channel(candidate: Cell, features: &[FeatureNeuron], th1: f64, grid: &GridSpec) -> bool {
    features
        .iter()
        .all(|f| grid.distance(f.cell, candidate) > th1)
}

/// Drops features sitting on negative activity. Returns the removed cells;
/// their represented cells fall back to the unrepresented pool.
pub fn activity_channel(features: &mut Vec<FeatureNeuron>, field: &NeuralField) -> Vec<Cell> {
    let mut removed = Vec::new();
    features.retain(|f| {
        let keep = field.activity(f.cell) >= 0.0;
        if !keep {
            removed.push(f.cell);
        }
        keep
    });
    removed
}

/// True iff every cell touched by the segment `a`–`b` has `ζ ≥ 0`.
pub fn collision_free_link(a: Cell, b: Cell, field: &NeuralField) -> bool {
    supercover_for_each(a, b, |c| field.activity(c) >= 0.0)
}

/// Recomputes the matrix and every feature's degree.
pub fn update_feature_matrix(features: &mut [FeatureNeuron], field: &NeuralField) -> FeatureMatrix {
    let grid = *field.grid();
    let k = features.len();
    let mut m = FeatureMatrix::zeros(k);
    for g in 0..k {
        for h in g + 1..k {
            let (a, b) = (features[g].cell, features[h].cell);
            if collision_free_link(a, b, field) {
                m.set_symmetric(g, h, grid.distance(a, b));
            }
        }
    }
    for (g, f) in features.iter_mut().enumerate() {
        f.degree = m.degree(g);
    }
    m
}

fn nearest_feature(features: &[FeatureNeuron], cell: Cell) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, f) in features.iter().enumerate() {
        let d = f.cell.distance_cells(cell);
        let better = match best {
            None => true,
            Some((bi, bd)) => {
                d < bd || (d == bd && f.cell.row_major_key() < features[bi].cell.row_major_key())
            }
        };
        if better {
            best = Some((i, d));
        }
    }
    best.map(|(i, _)| i)
}

/// Assigns each non-negative cell to the nearest feature joined to it by a
/// clear segment, and returns the represented fraction. Equal distances
/// resolve by row-major order of the feature cells.
pub fn representativeness(
    features: &mut [FeatureNeuron],
    field: &NeuralField,
) -> Result<Representativeness, FeatureError> {
    let grid = *field.grid();
    for f in features.iter_mut() {
        f.represented.clear();
        f.mean_distance = None;
    }
    let mut total = 0usize;
    let mut represented = 0usize;
    let mut order: Vec<usize> = (0..features.len()).collect();
    for cell in grid.cells() {
        if field.activity(cell) < 0.0 {
            continue;
        }
        total += 1;
        order.sort_by(|&a, &b| {
            let (fa, fb) = (features[a].cell, features[b].cell);
            fa.distance_cells(cell)
                .total_cmp(&fb.distance_cells(cell))
                .then(fa.row_major_key().cmp(&fb.row_major_key()))
        });
        if let Some(&i) = order
            .iter()
            .find(|&&i| collision_free_link(features[i].cell, cell, field))
        {
            represented += 1;
            features[i].represented.push(cell);
        }
    }
    if total == 0 {
        return Err(FeatureError::NoFreeCells);
    }
    for f in features.iter_mut() {
        f.mean_distance = mean_distance(&grid, f.cell, &f.represented);
    }
    Ok(Representativeness {
        ratio: represented as f64 / total as f64,
        represented,
        total,
    })
}

/// Mean distance from `from` to each cell of `cells`, meters.
pub fn mean_distance(grid: &GridSpec, from: Cell, cells: &[Cell]) -> Option<f64> {
    if cells.is_empty() {
        return None;
    }
    Some(cells.iter().map(|&c| grid.distance(from, c)).sum::<f64>() / cells.len() as f64)
}

/// Fusion loop shared by the plain and the representation-preserving variants.
/// `accept` sees the feature set with the removal applied and may veto it.
fn fuse(
    features: &mut Vec<FeatureNeuron>,
    field: &NeuralField,
    th2: f64,
    fusion_degree: usize,
    mut accept: impl FnMut(&mut Vec<FeatureNeuron>) -> bool,
) -> Vec<Cell> {
    let grid = *field.grid();
    let mut removed = Vec::new();
    let mut vetoed: Vec<(Cell, Cell)> = Vec::new();
    loop {
        update_feature_matrix(features, field);
        let mut dense: Vec<usize> = (0..features.len())
            .filter(|&i| features[i].degree > fusion_degree)
            .collect();
        dense.sort_by_key(|&i| features[i].cell.row_major_key());
        let mut fired = false;
        'pairs: for (n, &i) in dense.iter().enumerate() {
            for &j in &dense[n + 1..] {
                let (a, b) = (features[i].cell, features[j].cell);
                if vetoed.contains(&(a, b)) {
                    continue;
                }
                if grid.distance(a, b) < th2 && collision_free_link(a, b, field) {
                    let mut trial = features.clone();
                    trial.remove(j);
                    if accept(&mut trial) {
                        *features = trial;
                        removed.push(b);
                        fired = true;
                        break 'pairs;
                    }
                    vetoed.push((a, b));
                }
            }
        }
        if !fired {
            update_feature_matrix(features, field);
            return removed;
        }
    }
}

/// Among features with more than `fusion_degree` clear links, removes the
/// later (row-major) member of every pair closer than `th2` with a clear
/// link, repeating until nothing fires. Returns the removed cells.
pub fn secondary_fusion(
    features: &mut Vec<FeatureNeuron>,
    field: &NeuralField,
    th2: f64,
    fusion_degree: usize,
) -> Vec<Cell> {
    fuse(features, field, th2, fusion_degree, |_| true)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Replacement {
    pub old: Cell,
    pub new: Cell,
    /// Mean distance to the represented set before and after.
    pub mean_before: f64,
    pub mean_after: f64,
}

/// Replaces the feature nearest to `candidate` when the candidate reaches all
/// of that feature's represented cells clearly and has a strictly smaller mean
/// distance to them. Represented sets must be current.
pub fn optimize_feature(
    candidate: Cell,
    features: &mut [FeatureNeuron],
    field: &NeuralField,
) -> Option<Replacement> {
    let grid = *field.grid();
    let i = nearest_feature(features, candidate)?;
    let nearest = &features[i];
    if nearest.cell == candidate || nearest.represented.is_empty() {
        return None;
    }
    if field.activity(candidate) < 0.0 {
        return None;
    }
    if !nearest
        .represented
        .iter()
        .all(|&c| collision_free_link(candidate, c, field))
    {
        return None;
    }
    let before = nearest
        .mean_distance
        .or_else(|| mean_distance(&grid, nearest.cell, &nearest.represented))?;
    let after = mean_distance(&grid, candidate, &nearest.represented)?;
    if after < before {
        let old = nearest.cell;
        features[i].cell = candidate;
        features[i].mean_distance = Some(after);
        Some(Replacement {
            old,
            new: candidate,
            mean_before: before,
            mean_after: after,
        })
    } else {
        None
    }
}

/// Labels each feature with the smallest index in its connected component
/// of the link graph.
pub fn graph_components(matrix: &FeatureMatrix) -> Vec<usize> {
    let k = matrix.size();
    let mut parent: Vec<usize> = (0..k).collect();
    fn root(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    for g in 0..k {
        for h in g + 1..k {
            if matrix.get(g, h) > 0.0 {
                let (a, b) = (root(&mut parent, g), root(&mut parent, h));
                parent[a.max(b)] = a.min(b);
            }
        }
    }
    (0..k).map(|i| root(&mut parent, i)).collect()
}

/// Feature-graph components beyond one per connected free region, where
/// free regions are 8-connected sets of non-negative cells. Zero when any
/// two features sharing a region are joined by a route.
pub fn graph_gaps(cells: &[Cell], matrix: &FeatureMatrix, field: &NeuralField) -> usize {
    let grid = *field.grid();
    let k = cells.len();
    let mut region = vec![usize::MAX; grid.len()];
    let mut regions = Vec::with_capacity(k);
    for &c in cells {
        let start = grid.index(c);
        if region[start] == usize::MAX && field.activity(c) >= 0.0 {
            let mut stack = vec![c];
            region[start] = start;
            while let Some(u) = stack.pop() {
                for n in grid.neighbors(u) {
                    let i = grid.index(n);
                    if region[i] == usize::MAX && field.activity(n) >= 0.0 {
                        region[i] = start;
                        stack.push(n);
                    }
                }
            }
        }
        regions.push(region[start]);
    }
    let mut components = graph_components(matrix);
    components.sort_unstable();
    components.dedup();
    regions.sort_unstable();
    regions.dedup();
    components.len() - regions.len()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PassOutcome {
    NoCandidate,
    /// Too close to an existing feature.
    RejectedDistance,
    /// Candidate sits on negative activity.
    RejectedActivity,
    /// Admission would have lowered representativeness.
    RejectedRepresentation,
    /// Representation is complete and the candidate joins no separate parts
    /// of the feature graph.
    RejectedConnectivity,
    Admitted,
    Replaced,
    Unchanged,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PassRecord {
    pub outcome: PassOutcome,
    pub representativeness: f64,
    pub features: usize,
    /// Obstacles changed since the previous pass.
    pub environment_changed: bool,
}

/// Shared feature set, matrix and representativeness, updated one pass at a time.
#[derive(Debug, Clone)]
pub struct FeatureStore {
    grid: GridSpec,
    params: FeatureParams,
    features: Vec<FeatureNeuron>,
    matrix: FeatureMatrix,
    rep: Representativeness,
    gaps: usize,
    history: Vec<PassRecord>,
    replacements: Vec<Replacement>,
}

impl FeatureStore {
    pub fn new(grid: GridSpec, params: FeatureParams) -> Self {
        FeatureStore {
            grid,
            params,
            features: Vec::new(),
            matrix: FeatureMatrix::zeros(0),
            rep: Representativeness::default(),
            gaps: 0,
            history: Vec::new(),
            replacements: Vec::new(),
        }
    }

    /// Seeds a store from persisted feature cells and recomputes everything
    /// against `field`.
    pub fn from_cells(
        grid: GridSpec,
        params: FeatureParams,
        cells: &[Cell],
        field: &NeuralField,
    ) -> Result<Self, FeatureError> {
        let mut store = FeatureStore::new(grid, params);
        store.features = cells.iter().map(|&c| FeatureNeuron::new(c)).collect();
        store.recompute(field)?;
        Ok(store)
    }

    pub fn params(&self) -> &FeatureParams {
        &self.params
    }

    pub fn features(&self) -> &[FeatureNeuron] {
        &self.features
    }

    pub fn cells(&self) -> Vec<Cell> {
        self.features.iter().map(|f| f.cell).collect()
    }

    pub fn matrix(&self) -> &FeatureMatrix {
        &self.matrix
    }

    pub fn representativeness(&self) -> Representativeness {
        self.rep
    }

    pub fn is_complete(&self) -> bool {
        self.rep.is_complete()
    }

    /// See [`graph_gaps`].
    pub fn gaps(&self) -> usize {
        self.gaps
    }

    pub fn is_connected(&self) -> bool {
        self.gaps == 0
    }

    pub fn history(&self) -> &[PassRecord] {
        &self.history
    }

    pub fn replacements(&self) -> &[Replacement] {
        &self.replacements
    }

    fn recompute(&mut self, field: &NeuralField) -> Result<(), FeatureError> {
        self.matrix = update_feature_matrix(&mut self.features, field);
        self.rep = representativeness(&mut self.features, field)?;
        self.gaps = graph_gaps(&self.cells(), &self.matrix, field);
        Ok(())
    }

    /// Re-applies the activity channel after the world changed.
    pub fn refresh(&mut self, field: &NeuralField) -> Result<Vec<Cell>, FeatureError> {
        let removed = activity_channel(&mut self.features, field);
        self.recompute(field)?;
        Ok(removed)
    }

    /// One extraction pass for a turn observed between two headings at `cell`.
    pub fn observe_turn(
        &mut self,
        prev_heading: f64,
        curr_heading: f64,
        cell: Cell,
        field: &NeuralField,
        environment_changed: bool,
    ) -> Result<PassOutcome, FeatureError> {
        let th = self.params.th_theta_deg.to_radians();
        let candidate = angle_candidate(prev_heading, curr_heading, cell, th);
        self.offer(candidate, field, environment_changed)
    }

    /// One extraction pass. While representation is incomplete the candidate
    /// goes through the distance and activity channels and fusion follows.
    /// Once complete, a candidate is admitted only to join separate parts of
    /// the feature graph, and after that it may only replace its nearest
    /// feature. In an unchanged world a pass never lowers the represented
    /// count.
    pub fn offer(
        &mut self,
        candidate: Option<Cell>,
        field: &NeuralField,
        environment_changed: bool,
    ) -> Result<PassOutcome, FeatureError> {
        if environment_changed || self.rep.total == 0 {
            self.refresh(field)?;
        }
        let outcome = match candidate {
            None => PassOutcome::NoCandidate,
            Some(c) if self.is_complete() && self.is_connected() => self.optimize(c, field)?,
            Some(c) => self.admit(c, field)?,
        };
        self.history.push(PassRecord {
            outcome,
            representativeness: self.rep.ratio,
            features: self.features.len(),
            environment_changed,
        });
        Ok(outcome)
    }

    fn admit(&mut self, c: Cell, field: &NeuralField) -> Result<PassOutcome, FeatureError> {
        if !distance_channel(c, &self.features, self.params.th1, &self.grid) {
            return Ok(PassOutcome::RejectedDistance);
        }
        if field.activity(c) < 0.0 {
            return Ok(PassOutcome::RejectedActivity);
        }
        let baseline = self.rep.represented;
        let mut trial = self.features.clone();
        trial.push(FeatureNeuron::new(c));
        let rep = representativeness(&mut trial, field)?;
        if rep.represented < baseline {
            return Ok(PassOutcome::RejectedRepresentation);
        }
        if self.is_complete() {
            let matrix = update_feature_matrix(&mut trial, field);
            let cells: Vec<Cell> = trial.iter().map(|f| f.cell).collect();
            if graph_gaps(&cells, &matrix, field) >= self.gaps {
                return Ok(PassOutcome::RejectedConnectivity);
            }
            self.features = trial;
            self.recompute(field)?;
            return Ok(PassOutcome::Admitted);
        }
        let mut current = rep.represented;
        fuse(
            &mut trial,
            field,
            self.params.th2,
            self.params.fusion_degree,
            |set| match representativeness(set, field) {
                Ok(r) if r.represented >= current => {
                    current = r.represented;
                    true
                }
                _ => false,
            },
        );
        self.features = trial;
        self.recompute(field)?;
        Ok(PassOutcome::Admitted)
    }

    fn optimize(&mut self, c: Cell, field: &NeuralField) -> Result<PassOutcome, FeatureError> {
        let nearest = nearest_feature(&self.features, c);
        // Keep the spacing rule against every feature except the one replaced.
        let spaced = self
            .features
            .iter()
            .enumerate()
            .all(|(i, f)| Some(i) == nearest || self.grid.distance(f.cell, c) > self.params.th1);
        if !spaced {
            return Ok(PassOutcome::Unchanged);
        }
        let mut trial = self.features.clone();
        let Some(replacement) = optimize_feature(c, &mut trial, field) else {
            return Ok(PassOutcome::Unchanged);
        };
        let matrix = update_feature_matrix(&mut trial, field);
        let rep = representativeness(&mut trial, field)?;
        if !rep.is_complete() {
            return Ok(PassOutcome::Unchanged);
        }
        let cells: Vec<Cell> = trial.iter().map(|f| f.cell).collect();
        let gaps = graph_gaps(&cells, &matrix, field);
        if gaps > self.gaps {
            return Ok(PassOutcome::Unchanged);
        }
        self.features = trial;
        self.matrix = matrix;
        self.rep = rep;
        self.gaps = gaps;
        self.replacements.push(replacement);
        Ok(PassOutcome::Replaced)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural_field::{external_input, relax_for, ShuntingParams};

    fn open_field(n: usize) -> NeuralField {
        NeuralField::new(GridSpec::new(n, n, 1.0).unwrap())
    }

    /// Obstacle-only field relaxed to convergence.
    fn clearance_field(g: GridSpec, blocked: &[Cell], sigma: f64) -> NeuralField {
        let mut mask = vec![false; g.len()];
        for &c in blocked {
            mask[g.index(c)] = true;
        }
        let p = ShuntingParams {
            sigma,
            ..ShuntingParams::default()
        };
        let mut f = NeuralField::new(g);
        f.set_inputs(&external_input(&g, &mask, &[], &[], p.e).unwrap())
            .unwrap();
        relax_for(&mut f, &p, 20_000).unwrap();
        f
    }

    fn feats(cells: &[(usize, usize)]) -> Vec<FeatureNeuron> {
        cells.iter().map(|&(x, y)| FeatureNeuron::new(Cell::new(x, y))).collect()
    }

    #[test]
    fn angle_channel() {
        let c = Cell::new(1, 1);
        let th = 30f64.to_radians();
        assert_eq!(angle_candidate(0.3, 0.3, c, th), None);
        assert_eq!(angle_candidate(0.0, 45f64.to_radians(), c, th), Some(c));
        assert_eq!(angle_candidate(0.0, 350f64.to_radians(), c, th), None);
    }

    #[test]
    fn distance_channel_thresholds() {
        let g = GridSpec::new(20, 20, 1.0).unwrap();
        let c = Cell::new(10, 10);
        assert!(distance_channel(c, &[], 3.0, &g));
        assert!(!distance_channel(c, &feats(&[(12, 10)]), 3.0, &g));
        assert!(distance_channel(c, &feats(&[(14, 10)]), 3.0, &g));
        assert!(!distance_channel(c, &feats(&[(13, 10)]), 3.0, &g));
    }

    #[test]
    fn activity_channel_drops_negative_features() {
        let mut f = open_field(10);
        let mut set = feats(&[(1, 1), (5, 5)]);
        assert!(activity_channel(&mut set, &f).is_empty());
        f.set_activity(Cell::new(5, 5), -0.2);
        assert_eq!(activity_channel(&mut set, &f), vec![Cell::new(5, 5)]);
        assert_eq!(set.len(), 1);
    }

    #[test]
    fn link_checks() {
        let g = GridSpec::new(10, 10, 1.0).unwrap();
        let f = clearance_field(g, &[Cell::new(5, 5)], -0.5);
        let a = Cell::new(2, 2);
        assert!(collision_free_link(a, a, &f));
        assert!(!collision_free_link(Cell::new(5, 1), Cell::new(5, 8), &f));
        assert!(collision_free_link(Cell::new(1, 1), Cell::new(8, 1), &f));
    }

    #[test]
    fn halo_blocks_corner_graze_that_geometry_allows() {
        // Obstacle block with its corner at (5,5). The segment from (3,5) to
        // (5,3) passes diagonally next to the corner cell without touching it.
        let g = GridSpec::new(12, 12, 1.0).unwrap();
        let block: Vec<Cell> = (5..9)
            .flat_map(|x| (5..9).map(move |y| Cell::new(x, y)))
            .collect();
        let (a, b) = (Cell::new(3, 5), Cell::new(5, 3));
        let geometric_clear = crate::grid::supercover(a, b)
            .iter()
            .all(|c| !block.contains(c));
        assert!(geometric_clear);
        let f = clearance_field(g, &block, -0.5);
        assert!(!collision_free_link(a, b, &f));
        // Without lateral inhibition the same segment is clear.
        let f = clearance_field(g, &block, -1.5);
        assert!(collision_free_link(a, b, &f));
    }

    #[test]
    fn matrix_distances_and_walls() {
        let mut set = feats(&[(1, 1), (7, 4)]);
        let f = open_field(10);
        let m = update_feature_matrix(&mut set, &f);
        let d = (36.0f64 + 9.0).sqrt();
        assert_eq!(m.get(0, 1), d);
        assert_eq!(m.get(1, 0), d);
        assert_eq!(m.get(0, 0), 0.0);
        assert_eq!(set[0].degree, 1);

        let g = GridSpec::new(10, 10, 1.0).unwrap();
        let wall: Vec<Cell> = (0..10).map(|y| Cell::new(4, y)).collect();
        let f = clearance_field(g, &wall, -0.5);
        let m = update_feature_matrix(&mut set, &f);
        assert_eq!(m.get(0, 1), 0.0);

        let mut one = feats(&[(3, 3)]);
        assert_eq!(update_feature_matrix(&mut one, &f), FeatureMatrix::zeros(1));
    }

    #[test]
    fn representativeness_cases() {
        let f = open_field(10);
        assert_eq!(representativeness(&mut [], &f).unwrap().ratio, 0.0);
        let mut set = feats(&[(5, 5)]);
        let r = representativeness(&mut set, &f).unwrap();
        assert_eq!((r.represented, r.total), (100, 100));
        assert!(r.is_complete());
        assert_eq!(set[0].represented.len(), 100);

        let mut blocked = open_field(2);
        for c in [(0, 0), (0, 1), (1, 0), (1, 1)] {
            blocked.set_activity(Cell::new(c.0, c.1), -0.5);
        }
        assert_eq!(
            representativeness(&mut set[..0].to_vec(), &blocked),
            Err(FeatureError::NoFreeCells)
        );
    }

    #[test]
    fn blocked_nearest_feature_yields_to_visible_one() {
        let g = GridSpec::new(12, 5, 1.0).unwrap();
        let wall: Vec<Cell> = (0..5).map(|y| Cell::new(6, y)).collect();
        let f = clearance_field(g, &wall, -0.5);
        let mut set = feats(&[(8, 2), (0, 0)]);
        let r = representativeness(&mut set, &f).unwrap();
        assert!(r.is_complete());
        let c = Cell::new(4, 2);
        // Nearest is (8,2) behind the wall; (0,0) sees it and takes it.
        assert!(!collision_free_link(Cell::new(8, 2), c, &f));
        assert!(set[1].represented.contains(&c));
        assert!(set[0].represented.iter().all(|c| c.x > 6));
    }

    #[test]
    fn gaps_count_unjoined_features_within_a_region() {
        let g = GridSpec::new(24, 24, 1.0).unwrap();
        let block: Vec<Cell> = (10..14).flat_map(|x| (8..16).map(move |y| Cell::new(x, y))).collect();
        let f = clearance_field(g, &block, -0.5);
        let mut set = feats(&[(3, 12), (20, 12)]);
        let m = update_feature_matrix(&mut set, &f);
        assert_eq!(m.get(0, 1), 0.0);
        assert_eq!(graph_gaps(&[Cell::new(3, 12), Cell::new(20, 12)], &m, &f), 1);
        let cells = [Cell::new(3, 12), Cell::new(20, 12), Cell::new(11, 1)];
        let mut set = feats(&[(3, 12), (20, 12), (11, 1)]);
        let m = update_feature_matrix(&mut set, &f);
        assert_eq!(graph_components(&m), vec![0, 0, 0]);
        assert_eq!(graph_gaps(&cells, &m, &f), 0);
    }

    #[test]
    fn separate_regions_need_no_link() {
        let g = GridSpec::new(16, 8, 1.0).unwrap();
        let wall: Vec<Cell> = (0..8).map(|y| Cell::new(8, y)).collect();
        let f = clearance_field(g, &wall, -0.5);
        let mut set = feats(&[(2, 4), (13, 4)]);
        let m = update_feature_matrix(&mut set, &f);
        assert_eq!(graph_components(&m), vec![0, 1]);
        assert_eq!(graph_gaps(&[Cell::new(2, 4), Cell::new(13, 4)], &m, &f), 0);
    }

    #[test]
    fn representativeness_matches_brute_force() {
        let g = GridSpec::new(16, 12, 1.0).unwrap();
        let block: Vec<Cell> = (5..9).flat_map(|x| (3..8).map(move |y| Cell::new(x, y))).collect();
        let f = clearance_field(g, &block, -0.5);
        let mut set = feats(&[(1, 1), (12, 9), (2, 10)]);
        let r = representativeness(&mut set, &f).unwrap();
        let mut expect = 0;
        let mut total = 0;
        for c in g.cells().filter(|&c| f.activity(c) >= 0.0) {
            total += 1;
            if set.iter().any(|s| collision_free_link(s.cell, c, &f)) {
                expect += 1;
            }
        }
        assert_eq!((r.represented, r.total), (expect, total));
    }

    #[test]
    fn fusion_rules() {
        let f = open_field(30);
        // All pairwise distances ≥ 5: nothing fuses.
        let mut spread = feats(&[(2, 2), (2, 9), (9, 2), (9, 9), (16, 16)]);
        assert!(secondary_fusion(&mut spread, &f, 5.0, 3).is_empty());
        assert_eq!(spread.len(), 5);

        // Star: hub (10,10) with a close companion (13,10); everyone sees
        // everyone, so all have degree 4 > 3 and the later-ordered companion goes.
        let mut star = feats(&[(10, 10), (13, 10), (10, 20), (1, 10), (10, 1)]);
        let removed = secondary_fusion(&mut star, &f, 5.0, 3);
        assert_eq!(removed, vec![Cell::new(13, 10)]);
        assert_eq!(star.len(), 4);
    }

    #[test]
    fn fusion_keeps_pairs_split_by_obstacles() {
        let g = GridSpec::new(30, 30, 1.0).unwrap();
        let wall: Vec<Cell> = (8..13).map(|y| Cell::new(11, y)).collect();
        let f = clearance_field(g, &wall, -0.5);
        let mut set = feats(&[(10, 10), (13, 10), (10, 25), (1, 10), (10, 1), (20, 20), (25, 3)]);
        let removed = secondary_fusion(&mut set, &f, 5.0, 3);
        assert!(!removed.contains(&Cell::new(13, 10)));
        assert!(set.iter().any(|s| s.cell == Cell::new(10, 10)));
    }

    #[test]
    fn optimization_moves_feature_to_cluster_center() {
        let f = open_field(9);
        let mut set = feats(&[(0, 4)]);
        representativeness(&mut set, &f).unwrap();
        let before = set[0].mean_distance.unwrap();
        // Brute-force both means over the represented cluster.
        let g = *f.grid();
        let cluster = set[0].represented.clone();
        let brute = |c: Cell| cluster.iter().map(|&x| g.distance(c, x)).sum::<f64>() / cluster.len() as f64;
        assert!((brute(Cell::new(0, 4)) - before).abs() < 1e-12);
        assert!(brute(Cell::new(4, 4)) < before);
        let r = optimize_feature(Cell::new(4, 4), &mut set, &f).unwrap();
        assert_eq!(r.old, Cell::new(0, 4));
        assert!(r.mean_after < r.mean_before);
        assert!((r.mean_after - brute(Cell::new(4, 4))).abs() < 1e-12);
        // Same position: nothing to gain.
        assert!(optimize_feature(Cell::new(4, 4), &mut set, &f).is_none());
    }

    #[test]
    fn optimization_refuses_blocked_candidate() {
        let g = GridSpec::new(9, 9, 1.0).unwrap();
        let f = clearance_field(g, &[Cell::new(2, 6), Cell::new(2, 7)], -0.5);
        let mut set = feats(&[(0, 8)]);
        representativeness(&mut set, &f).unwrap();
        assert!(set[0].represented.contains(&Cell::new(0, 7)));
        let snapshot = set.clone();
        // (4,6) cannot see (0,7) past the obstacle and its halo.
        assert!(!collision_free_link(Cell::new(4, 6), Cell::new(0, 7), &f));
        assert!(optimize_feature(Cell::new(4, 6), &mut set, &f).is_none());
        assert_eq!(set, snapshot);
    }

    #[test]
    fn matrix_from_rows_validates() {
        assert!(FeatureMatrix::from_rows(vec![vec![0.0, 1.0], vec![1.0, 0.0]]).is_ok());
        assert!(FeatureMatrix::from_rows(vec![vec![0.0, 1.0], vec![2.0, 0.0]]).is_err());
        assert!(FeatureMatrix::from_rows(vec![vec![1.0]]).is_err());
        assert!(FeatureMatrix::from_rows(vec![vec![0.0, 1.0]]).is_err());
    }

    #[test]
    fn store_passes_never_lower_representation_in_static_world() {
        let g = GridSpec::new(20, 20, 1.0).unwrap();
        let block: Vec<Cell> = (8..12).flat_map(|x| (6..14).map(move |y| Cell::new(x, y))).collect();
        let f = clearance_field(g, &block, -0.5);
        let mut store = FeatureStore::new(g, FeatureParams::default());
        let mut last = 0usize;
        for c in [(2, 2), (3, 3), (17, 2), (2, 17), (17, 17), (10, 2), (10, 17), (5, 10), (15, 10), (6, 4)] {
            store.offer(Some(Cell::new(c.0, c.1)), &f, false).unwrap();
            let r = store.representativeness();
            assert!(r.represented >= last);
            last = r.represented;
        }
        assert!(store.representativeness().ratio > 0.9);
        // Spacing holds for every admitted pair.
        let cells = store.cells();
        for (i, a) in cells.iter().enumerate() {
            for b in &cells[i + 1..] {
                assert!(g.distance(*a, *b) > 3.0);
            }
        }
    }
}
