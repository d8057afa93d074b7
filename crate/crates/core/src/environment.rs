//! The discrete rescue world: obstacles and their schedules, robots and targets.

use crate::grid::{Cell, GridSpec, Point};

#[derive(Debug, Clone, PartialEq)]
pub enum ObstacleKind {
    Static,
    /// Translates by `velocity` (meters per tick) until it reaches `stop_center`.
    Moving { velocity: Point, stop_center: Point },
    /// Absent before `trigger_tick`, present from it onwards.
    Sudden { trigger_tick: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub enum ObstacleShape {
    /// Analytic round obstacle; `lambda` is the size term dividing the squared radius.
    Disc { lambda: f64 },
    /// Explicit cells, placed as laid out when the obstacle sits at its initial center.
    Cells(Vec<Cell>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Obstacle {
    pub kind: ObstacleKind,
    /// Center at tick 0.
    pub center: Point,
    pub shape: ObstacleShape,
}

impl Obstacle {
    pub fn static_cells(cells: Vec<Cell>, center: Point) -> Self {
        Obstacle {
            kind: ObstacleKind::Static,
            center,
            shape: ObstacleShape::Cells(cells),
        }
    }

    pub fn static_disc(center: Point, lambda: f64) -> Self {
        Obstacle {
            kind: ObstacleKind::Static,
            center,
            shape: ObstacleShape::Disc { lambda },
        }
    }

    pub fn is_active(&self, tick: u64) -> bool {
        match self.kind {
            ObstacleKind::Sudden { trigger_tick } => tick >= trigger_tick,
            _ => true,
        }
    }

    /// Center after `tick` motion updates. A mover advances once per tick and
    /// each coordinate is clamped at its stop value.
    pub fn center_at(&self, tick: u64) -> Point {
        match self.kind {
            ObstacleKind::Moving {
                velocity,
                stop_center,
            } => {
                let t = tick as f64;
                let advance = |c: f64, v: f64, stop: f64| {
                    let next = c + v * t;
                    if v > 0.0 {
                        next.min(stop.max(c))
                    } else if v < 0.0 {
                        next.max(stop.min(c))
                    } else {
                        c
                    }
                };
                Point::new(
                    advance(self.center.x, velocity.x, stop_center.x),
                    advance(self.center.y, velocity.y, stop_center.y),
                )
            }
            _ => self.center,
        }
    }

    /// Cells covered by a cell-list obstacle at `tick`, translated by the
    /// rounded displacement of its center. `None` for analytic obstacles.
    pub fn cells_at(&self, grid: &GridSpec, tick: u64) -> Option<Vec<Cell>> {
        let ObstacleShape::Cells(cells) = &self.shape else {
            return None;
        };
        let c = self.center_at(tick);
        let dx = ((c.x - self.center.x) / grid.cell_length).round() as isize;
        let dy = ((c.y - self.center.y) / grid.cell_length).round() as isize;
        Some(
            cells
                .iter()
                .filter_map(|&cell| grid.offset(cell, dx, dy))
                .collect(),
        )
    }
}

/// Normalized squared distance of `point` from an analytic obstacle's center
/// at `tick`: 1 on the surface, above 1 outside, below 1 inside.
pub fn gamma(point: Point, obstacle: &Obstacle, tick: u64) -> Result<f64, EnvError> {
    let ObstacleShape::Disc { lambda } = obstacle.shape else {
        return Err(EnvError::UnsupportedGeometry);
    };
    let c = obstacle.center_at(tick);
    let (dx, dy) = (point.x - c.x, point.y - c.y);
    Ok((dx * dx + dy * dy) / lambda)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    /// Heading in radians.
    pub theta: f64,
}

impl Pose {
    pub fn point(&self) -> Point {
        Point::new(self.x, self.y)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RobotState {
    pub id: usize,
    pub pose: Pose,
    /// Meters per tick.
    pub speed: f64,
    pub assigned_target: Option<usize>,
    pub trajectory: Vec<Pose>,
    pub idle_steps: u64,
    /// Set when a moving obstacle overruns the robot's cell.
    pub halted: bool,
}

impl RobotState {
    pub fn new(id: usize, pose: Pose, speed: f64) -> Self {
        RobotState {
            id,
            pose,
            speed,
            assigned_target: None,
            trajectory: vec![pose],
            idle_steps: 0,
            halted: false,
        }
    }

    pub fn cell(&self, grid: &GridSpec) -> Cell {
        grid.cell_of(self.pose.point())
            .expect("robot pose is kept inside the grid")
    }

    /// Sum of displacements along the recorded trajectory.
    pub fn path_length(&self) -> f64 {
        self.trajectory
            .windows(2)
            .map(|w| w[0].point().distance(w[1].point()))
            .sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TargetStatus {
    Pending,
    Assigned,
    Rescued,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Target {
    pub id: usize,
    pub position: Point,
    pub status: TargetStatus,
}

impl Target {
    pub fn is_live(&self) -> bool {
        self.status != TargetStatus::Rescued
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EnvError {
    #[error("cell-list obstacles have no analytic surface function")]
    UnsupportedGeometry,
}

/// The world at one tick. Mutated only by the simulation loop.
#[derive(Debug, Clone, PartialEq)]
pub struct Environment {
    pub grid: GridSpec,
    pub obstacles: Vec<Obstacle>,
    pub robots: Vec<RobotState>,
    pub targets: Vec<Target>,
    pub tick: u64,
}

impl Environment {
    pub fn new(grid: GridSpec) -> Self {
        Environment {
            grid,
            obstacles: Vec::new(),
            robots: Vec::new(),
            targets: Vec::new(),
            tick: 0,
        }
    }

    /// True iff `point` lies in the grid, outside every active analytic
    /// obstacle (`Γ > 1`) and off every active obstacle cell at `tick`.
    pub fn is_free(&self, point: Point, tick: u64) -> bool {
        let Some(cell) = self.grid.cell_of(point) else {
            return false;
        };
        self.obstacles.iter().filter(|o| o.is_active(tick)).all(|o| match &o.shape {
            ObstacleShape::Disc { .. } => gamma(point, o, tick).map(|g| g > 1.0).unwrap_or(false),
            ObstacleShape::Cells(_) => !o
                .cells_at(&self.grid, tick)
                .unwrap_or_default()
                .contains(&cell),
        })
    }

    /// A cell is blocked iff its center is not free.
    pub fn is_cell_free(&self, cell: Cell, tick: u64) -> bool {
        self.is_free(self.grid.center(cell), tick)
    }

    /// Blocked-cell mask at `tick`, indexed row-major.
    pub fn occupancy_at(&self, tick: u64) -> Vec<bool> {
        let g = &self.grid;
        let mut blocked = vec![false; g.len()];
        for o in self.obstacles.iter().filter(|o| o.is_active(tick)) {
            match &o.shape {
                ObstacleShape::Cells(_) => {
                    for c in o.cells_at(g, tick).unwrap_or_default() {
                        blocked[g.index(c)] = true;
                    }
                }
                ObstacleShape::Disc { lambda } => {
                    let c = o.center_at(tick);
                    let r = lambda.sqrt();
                    let lo = |v: f64| ((v - r) / g.cell_length - 1.0).floor().max(0.0) as usize;
                    let hi = |v: f64, n: usize| {
                        (((v + r) / g.cell_length + 1.0).ceil() as usize).min(n - 1)
                    };
                    for y in lo(c.y)..=hi(c.y, g.height) {
                        for x in lo(c.x)..=hi(c.x, g.width) {
                            let cell = Cell::new(x, y);
                            if gamma(g.center(cell), o, tick).unwrap_or(f64::INFINITY) <= 1.0 {
                                blocked[g.index(cell)] = true;
                            }
                        }
                    }
                }
            }
        }
        blocked
    }

    pub fn occupancy(&self) -> Vec<bool> {
        self.occupancy_at(self.tick)
    }

    /// Advances one tick: movers step toward their stop centers and sudden
    /// obstacles due at the new tick switch on.
    pub fn step(&mut self) {
        self.tick += 1;
    }

    /// True when any obstacle changes state between `tick` and `tick + 1`.
    pub fn changes_after(&self, tick: u64) -> bool {
        self.obstacles.iter().any(|o| match o.kind {
            ObstacleKind::Static => false,
            ObstacleKind::Moving { .. } => o.center_at(tick) != o.center_at(tick + 1),
            ObstacleKind::Sudden { trigger_tick } => trigger_tick == tick + 1,
        })
    }

    pub fn target_cell(&self, target: usize) -> Cell {
        self.grid
            .cell_of(self.targets[target].position)
            .expect("targets are validated in bounds")
    }

    pub fn all_rescued(&self) -> bool {
        self.targets.iter().all(|t| !t.is_live())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> GridSpec {
        GridSpec::new(70, 70, 1.0).unwrap()
    }

    fn mover() -> Obstacle {
        Obstacle {
            kind: ObstacleKind::Moving {
                velocity: Point::new(0.0, -1.0),
                stop_center: Point::new(20.0, 39.0),
            },
            center: Point::new(20.0, 45.0),
            shape: ObstacleShape::Disc { lambda: 2.0 },
        }
    }

    #[test]
    fn gamma_values() {
        let o = Obstacle::static_disc(Point::new(0.0, 0.0), 4.0);
        assert_eq!(gamma(Point::new(0.0, 0.0), &o, 0).unwrap(), 0.0);
        assert_eq!(gamma(Point::new(2.0, 0.0), &o, 0).unwrap(), 1.0);
        let o = Obstacle::static_disc(Point::new(0.0, 0.0), 2.0);
        assert_eq!(gamma(Point::new(2.0, 0.0), &o, 0).unwrap(), 2.0);
        let cells = Obstacle::static_cells(vec![Cell::new(1, 1)], Point::new(1.5, 1.5));
        assert_eq!(
            gamma(Point::new(0.0, 0.0), &cells, 0),
            Err(EnvError::UnsupportedGeometry)
        );
    }

    #[test]
    fn empty_world_is_free_everywhere() {
        let env = Environment::new(grid());
        assert!(env.is_free(Point::new(10.3, 55.2), 0));
        assert!(!env.is_free(Point::new(-1.0, 5.0), 0));
        assert!(!env.is_free(Point::new(5.0, 70.5), 0));
    }

    #[test]
    fn static_obstacle_blocks_interior() {
        let mut env = Environment::new(grid());
        env.obstacles.push(Obstacle::static_disc(Point::new(10.0, 10.0), 9.0));
        assert!(!env.is_free(Point::new(11.0, 10.0), 0));
        assert!(env.is_free(Point::new(14.0, 10.0), 0));
        // Surface itself is not free.
        assert!(!env.is_free(Point::new(13.0, 10.0), 0));
    }

    #[test]
    fn mover_clamps_at_stop() {
        let o = mover();
        assert_eq!(o.center_at(6), Point::new(20.0, 39.0));
        assert_eq!(o.center_at(7), Point::new(20.0, 39.0));
        assert_eq!(o.center_at(3), Point::new(20.0, 42.0));
    }

    #[test]
    fn mover_occupies_cell_only_after_advancing() {
        // Stepping oracle: move the center tick by tick and re-evaluate Γ.
        let mut env = Environment::new(grid());
        env.obstacles.push(mover());
        let probe = Point::new(20.0, 41.0);
        let mut center = Point::new(20.0, 45.0);
        for tick in 0..10u64 {
            let g = ((probe.x - center.x).powi(2) + (probe.y - center.y).powi(2)) / 2.0;
            assert_eq!(env.is_free(probe, tick), g > 1.0, "tick {tick}");
            center.y = (center.y - 1.0).max(39.0);
        }
        assert!(env.is_free(probe, 0));
        assert!(!env.is_free(probe, 4));
    }

    #[test]
    fn sudden_obstacle_triggers() {
        let mut env = Environment::new(grid());
        env.obstacles.push(Obstacle {
            kind: ObstacleKind::Sudden { trigger_tick: 10 },
            center: Point::new(5.5, 5.5),
            shape: ObstacleShape::Cells(vec![Cell::new(5, 5)]),
        });
        let p = Point::new(5.5, 5.5);
        assert!(env.is_free(p, 9));
        assert!(!env.is_free(p, 10));
        assert!(env.changes_after(9));
        assert!(!env.changes_after(10));
    }

    #[test]
    fn static_world_step_changes_only_tick() {
        let mut env = Environment::new(grid());
        env.obstacles.push(Obstacle::static_disc(Point::new(30.0, 30.0), 5.0));
        let before = env.occupancy();
        env.step();
        assert_eq!(env.tick, 1);
        assert_eq!(env.occupancy(), before);
    }

    #[test]
    fn moving_cell_list_translates() {
        let g = grid();
        let o = Obstacle {
            kind: ObstacleKind::Moving {
                velocity: Point::new(0.0, -1.0),
                stop_center: Point::new(10.5, 7.5),
            },
            center: Point::new(10.5, 10.5),
            shape: ObstacleShape::Cells(vec![Cell::new(10, 10), Cell::new(11, 10)]),
        };
        assert_eq!(o.cells_at(&g, 2).unwrap(), vec![Cell::new(10, 8), Cell::new(11, 8)]);
        assert_eq!(o.cells_at(&g, 9).unwrap(), vec![Cell::new(10, 7), Cell::new(11, 7)]);
    }

    #[test]
    fn occupancy_agrees_with_gamma_rule() {
        let mut env = Environment::new(grid());
        env.obstacles.push(Obstacle::static_disc(Point::new(30.2, 12.7), 7.3));
        env.obstacles.push(mover());
        for tick in [0, 3, 9] {
            let occ = env.occupancy_at(tick);
            for cell in env.grid.cells() {
                let p = env.grid.center(cell);
                assert_eq!(!occ[env.grid.index(cell)], env.is_free(p, tick));
            }
        }
    }
}
