//! Grid geometry: cell indexing, cell/metric conversion and supercover traversal.

use serde::{Deserialize, Serialize};

/// Dimensions of the discrete world. One neuron per cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub width: usize,
    pub height: usize,
    /// Edge length of one cell in meters.
    pub cell_length: f64,
}

impl GridSpec {
    pub fn new(width: usize, height: usize, cell_length: f64) -> Result<Self, GridError> {
        let spec = GridSpec {
            width,
            height,
            cell_length,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), GridError> {
        if self.width == 0 || self.height == 0 {
            return Err(GridError::EmptyGrid);
        }
        if !(self.cell_length > 0.0 && self.cell_length.is_finite()) {
            return Err(GridError::BadCellLength(self.cell_length));
        }
        Ok(())
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.width * self.height
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Row-major index.
    #[inline]
    pub fn index(&self, cell: Cell) -> usize {
        cell.y * self.width + cell.x
    }

    #[inline]
    pub fn cell_at(&self, index: usize) -> Cell {
        Cell {
            x: index % self.width,
            y: index / self.width,
        }
    }

    #[inline]
    pub fn contains(&self, cell: Cell) -> bool {
        cell.x < self.width && cell.y < self.height
    }

    pub fn contains_point(&self, p: Point) -> bool {
        p.x.is_finite()
            && p.y.is_finite()
            && p.x >= 0.0
            && p.y >= 0.0
            && p.x <= self.width as f64 * self.cell_length
            && p.y <= self.height as f64 * self.cell_length
    }

    /// Metric center of a cell.
    #[inline]
    pub fn center(&self, cell: Cell) -> Point {
        Point {
            x: (cell.x as f64 + 0.5) * self.cell_length,
            y: (cell.y as f64 + 0.5) * self.cell_length,
        }
    }

    /// Cell containing a metric point. Cell `i` covers `(i·L, (i+1)·L]`, so a
    /// point at integer meter coordinate `n` lands in cell `n - 1` when `L = 1`.
    pub fn cell_of(&self, p: Point) -> Option<Cell> {
        if !self.contains_point(p) {
            return None;
        }
        let to_idx = |v: f64, n: usize| -> usize {
            let i = (v / self.cell_length).ceil() as isize - 1;
            i.clamp(0, n as isize - 1) as usize
        };
        Some(Cell {
            x: to_idx(p.x, self.width),
            y: to_idx(p.y, self.height),
        })
    }

    /// Offsets a cell, returning `None` outside the grid.
    #[inline]
    pub fn offset(&self, cell: Cell, dx: isize, dy: isize) -> Option<Cell> {
        let x = cell.x as isize + dx;
        let y = cell.y as isize + dy;
        if x < 0 || y < 0 || x >= self.width as isize || y >= self.height as isize {
            None
        } else {
            Some(Cell {
                x: x as usize,
                y: y as usize,
            })
        }
    }

    /// In-bounds 8-neighborhood, in the fixed order of [`NEIGHBOR_OFFSETS`].
    pub fn neighbors(&self, cell: Cell) -> impl Iterator<Item = Cell> + '_ {
        NEIGHBOR_OFFSETS
            .iter()
            .filter_map(move |&(dx, dy)| self.offset(cell, dx, dy))
    }

    /// Euclidean distance between two cell centers in meters.
    #[inline]
    pub fn distance(&self, a: Cell, b: Cell) -> f64 {
        a.distance_cells(b) * self.cell_length
    }

    pub fn cells(&self) -> impl Iterator<Item = Cell> + '_ {
        (0..self.len()).map(move |i| self.cell_at(i))
    }
}

/// The 8-neighborhood, axial moves first.
pub const NEIGHBOR_OFFSETS: [(isize, isize); 8] = [
    (1, 0),
    (0, 1),
    (-1, 0),
    (0, -1),
    (1, 1),
    (-1, 1),
    (-1, -1),
    (1, -1),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Cell {
    pub x: usize,
    pub y: usize,
}

impl Cell {
    pub const fn new(x: usize, y: usize) -> Self {
        Cell { x, y }
    }

    /// Euclidean distance in cell units.
    #[inline]
    pub fn distance_cells(self, other: Cell) -> f64 {
        let dx = self.x as f64 - other.x as f64;
        let dy = self.y as f64 - other.y as f64;
        (dx * dx + dy * dy).sqrt()
    }

    #[inline]
    pub fn chebyshev(self, other: Cell) -> usize {
        self.x.abs_diff(other.x).max(self.y.abs_diff(other.y))
    }

    /// Key for row-major ordering (row first, then column).
    #[inline]
    pub fn row_major_key(self) -> (usize, usize) {
        (self.y, self.x)
    }

    pub fn is_neighbor_or_same(self, other: Cell) -> bool {
        self.chebyshev(other) <= 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    #[inline]
    pub fn distance(self, other: Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GridError {
    #[error("grid must have at least one cell in each dimension")]
    EmptyGrid,
    #[error("cell length must be positive and finite, got {0}")]
    BadCellLength(f64),
}

/// Every cell touched by the segment joining the centers of `a` and `b`,
/// including both side cells wherever the segment passes exactly through a
/// cell corner. Cells are yielded in traversal order starting at `a`.
pub fn supercover(a: Cell, b: Cell) -> Vec<Cell> {
    let mut out = Vec::with_capacity(a.x.abs_diff(b.x) + a.y.abs_diff(b.y) + 1);
    supercover_for_each(a, b, |c| {
        out.push(c);
        true
    });
    out
}

/// Visits the supercover of `a`–`b` until `visit` returns `false`.
/// Returns `true` when the whole segment was visited.
pub fn supercover_for_each(a: Cell, b: Cell, mut visit: impl FnMut(Cell) -> bool) -> bool {
    let dx = a.x.abs_diff(b.x) as i64;
    let dy = a.y.abs_diff(b.y) as i64;
    let sx: isize = if b.x >= a.x { 1 } else { -1 };
    let sy: isize = if b.y >= a.y { 1 } else { -1 };
    let (mut x, mut y) = (a.x as isize, a.y as isize);
    if !visit(a) {
        return false;
    }
    let (mut nx, mut ny) = (0i64, 0i64);
    let cell = |x: isize, y: isize| Cell::new(x as usize, y as usize);
    while nx < dx || ny < dy {
        // Compare parameters of the next vertical and horizontal boundary crossings.
        let decision = (1 + 2 * nx) * dy - (1 + 2 * ny) * dx;
        if decision == 0 {
            if !visit(cell(x + sx, y)) || !visit(cell(x, y + sy)) {
                return false;
            }
            x += sx;
            y += sy;
            nx += 1;
            ny += 1;
        } else if decision < 0 {
            x += sx;
            nx += 1;
        } else {
            y += sy;
            ny += 1;
        }
        if !visit(cell(x, y)) {
            return false;
        }
    }
    true
}

/// Shortest distance from point `p` to segment `a`–`b`.
pub fn point_segment_distance(p: Point, a: Point, b: Point) -> f64 {
    let (vx, vy) = (b.x - a.x, b.y - a.y);
    let len2 = vx * vx + vy * vy;
    if len2 == 0.0 {
        return p.distance(a);
    }
    let t = (((p.x - a.x) * vx + (p.y - a.y) * vy) / len2).clamp(0.0, 1.0);
    p.distance(Point::new(a.x + t * vx, a.y + t * vy))
}

/// Wraps an angle into `(-π, π]`.
pub fn wrap_angle(theta: f64) -> f64 {
    use std::f64::consts::PI;
    let mut t = theta % (2.0 * PI);
    if t <= -PI {
        t += 2.0 * PI;
    } else if t > PI {
        t -= 2.0 * PI;
    }
    t
}
