//! Tick-driven rescue simulation, benchmarks and parameter sweeps.
//!
//! Each tick runs, in order: obstacle update, field relaxation, target
//! assignment, one command-and-advance per robot, rescue detection and a
//! feature-extraction pass. Robots either climb a private neural field to
//! their goal or, once a feature model is available, follow a heuristic
//! polyline planned over the feature matrix.

use crate::environment::{Environment, Pose, RobotState, TargetStatus};
use crate::feature_learning::{collision_free_link, FeatureError, FeatureMatrix, FeatureStore, Replacement};
use crate::grid::{point_segment_distance, Cell, GridSpec, Point};
use crate::heuristic_planner::{plan_via_matrix, PlanQuery};
use crate::navigation::{advance_robot, assign_targets, command_neuron, ActivityMatrix, Command, StepOutcome};
use crate::neural_field::{external_input, relax_for, FieldError, NeuralField, ParamError, ShuntingParams};
use crate::scenario::World;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

/// Euler-step budget for fields that must be at steady state.
pub const CONVERGE_ITERS: usize = 50_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Binn,
    Flbbinn,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Binn => "binn",
            Method::Flbbinn => "flbbinn",
        })
    }
}

impl FromStr for Method {
    type Err = SimError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "binn" => Ok(Method::Binn),
            "flbbinn" => Ok(Method::Flbbinn),
            other => Err(SimError::UnknownMethod(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SimError {
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Params(#[from] ParamError),
    #[error("unknown method {0:?}; expected binn or flbbinn")]
    UnknownMethod(String),
    #[error("scenario has no probe start/target")]
    NoProbe,
    #[error("scenario defines no trap")]
    NoTrap,
    #[error("start point lies outside the grid")]
    OutOfGrid,
    #[error("feature model does not fit this world: {0}")]
    Model(String),
}

/// A persisted feature set and its matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureModel {
    pub cells: Vec<Cell>,
    pub matrix: FeatureMatrix,
    pub degrees: Vec<usize>,
    pub represented: Vec<usize>,
}

impl FeatureModel {
    pub fn from_store(store: &FeatureStore) -> Self {
        FeatureModel {
            cells: store.cells(),
            matrix: store.matrix().clone(),
            degrees: store.features().iter().map(|f| f.degree).collect(),
            represented: store.features().iter().map(|f| f.represented.len()).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOptions {
    pub method: Method,
    pub seed: u64,
    /// Defaults to `10·(width + height)`.
    pub ticks_max: Option<u64>,
    pub snapshot_every: Option<u64>,
    /// Plan with this model instead of learning one (flbbinn only).
    pub model: Option<FeatureModel>,
    /// After the last rescue, keep sending robots to unrepresented areas
    /// until every free cell is represented (flbbinn learning only).
    pub explore: bool,
}

impl RunOptions {
    pub fn new(method: Method) -> Self {
        RunOptions {
            method,
            seed: 0,
            ticks_max: None,
            snapshot_every: None,
            model: None,
            explore: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CollisionKind {
    /// Commanded cell held an obstacle or another robot; the robot stayed put.
    Blocked,
    /// A moving obstacle overran the robot, which halted for good.
    Crushed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CollisionEvent {
    pub tick: u64,
    pub robot: usize,
    pub cell: Cell,
    pub kind: CollisionKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RescueEvent {
    pub tick: u64,
    pub target: usize,
    pub robot: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobotReport {
    pub id: usize,
    pub path_length: f64,
    /// Ticks with a displacement.
    pub steps: u64,
    pub idle_steps: u64,
    pub halted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RescueReport {
    pub scenario: String,
    pub method: Method,
    pub seed: u64,
    /// Grid neurons for binn, feature neurons for flbbinn.
    pub neurons: usize,
    pub features: usize,
    pub robots: Vec<RobotReport>,
    pub path_length: f64,
    pub steps: u64,
    pub idle_steps: u64,
    pub rescued: usize,
    pub targets: usize,
    pub rescue_order: Vec<RescueEvent>,
    pub ticks: u64,
    pub complete: bool,
    pub collisions: Vec<CollisionEvent>,
    /// Euler steps summed over all fields, per tick.
    pub relax_iterations: Vec<usize>,
    /// Heuristic legs abandoned for field navigation.
    pub fallbacks: usize,
    pub heuristic_legs: usize,
    pub representativeness: f64,
    /// Representativeness after every extraction pass.
    pub representativeness_history: Vec<f64>,
    pub representation_complete_tick: Option<u64>,
    pub first_heuristic_tick: Option<u64>,
    pub replacements: Vec<Replacement>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub tick: u64,
    pub robot: usize,
    pub x: f64,
    pub y: f64,
    /// Degrees.
    pub theta: f64,
    pub idle: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub tick: u64,
    pub robot: usize,
    pub activity: Vec<f64>,
}

/// Everything a run produces.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub report: RescueReport,
    pub trajectory: Vec<TrajectoryRow>,
    pub snapshots: Vec<Snapshot>,
    /// Learned model (flbbinn learning runs).
    pub model: Option<FeatureModel>,
    /// Obstacle-only field at the final tick.
    pub clearance: NeuralField,
    /// World at the final tick.
    pub env: Environment,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Goal {
    Target(usize),
    Virtual(Cell),
}

#[derive(Debug, Clone)]
enum Leg {
    None,
    Field {
        goal: Goal,
        field: NeuralField,
        started: u64,
    },
    Path {
        goal: Goal,
        points: Vec<Point>,
        next: usize,
    },
}

impl Leg {
    fn goal(&self) -> Option<Goal> {
        match self {
            Leg::None => None,
            Leg::Field { goal, .. } | Leg::Path { goal, .. } => Some(*goal),
        }
    }
}

struct RobotCtl {
    leg: Leg,
    leg_start: Cell,
    heading: Option<f64>,
    steps: u64,
}

struct Sim {
    env: Environment,
    params: ShuntingParams,
    opts: RunOptions,
    name: String,
    start_tick: u64,
    occupancy: Vec<bool>,
    clearance: NeuralField,
    target_fields: Vec<Option<NeuralField>>,
    assigned: Vec<Option<usize>>,
    ctl: Vec<RobotCtl>,
    store: Option<FeatureStore>,
    rows: Vec<TrajectoryRow>,
    snapshots: Vec<Snapshot>,
    collisions: Vec<CollisionEvent>,
    rescues: Vec<RescueEvent>,
    relax_log: Vec<usize>,
    fallbacks: usize,
    heuristic_legs: usize,
    rep_complete_tick: Option<u64>,
    first_heuristic_tick: Option<u64>,
    exploration_done: bool,
}

fn field_with(grid: GridSpec, inputs: &[f64]) -> Result<NeuralField, FieldError> {
    let mut f = NeuralField::new(grid);
    f.set_inputs(inputs)?;
    Ok(f)
}

/// Relaxes an obstacle-only field to steady state. Its sign pattern marks
/// obstacles and their inhibitory halo.
pub fn clearance_field(grid: GridSpec, blocked: &[bool], params: &ShuntingParams) -> Result<NeuralField, FieldError> {
    relaxed_clearance(grid, blocked, params).map(|(f, _)| f)
}

fn relaxed_clearance(
    grid: GridSpec,
    blocked: &[bool],
    params: &ShuntingParams,
) -> Result<(NeuralField, usize), FieldError> {
    let mut f = field_with(grid, &external_input(&grid, blocked, &[], &[], params.e)?)?;
    let n = relax_for(&mut f, params, CONVERGE_ITERS)?;
    Ok((f, n))
}

impl Sim {
    fn new(world: &World, opts: RunOptions) -> Result<Self, SimError> {
        world.params.validate()?;
        let env = world.env.clone();
        let grid = env.grid;
        let occupancy = env.occupancy();
        let clearance = clearance_field(grid, &occupancy, &world.params)?;
        let learning = opts.method == Method::Flbbinn && opts.model.is_none();
        let store = match (&opts.model, opts.method) {
            (Some(model), Method::Flbbinn) => {
                if model.matrix.size() != model.cells.len() {
                    return Err(SimError::Model("matrix size differs from feature count".into()));
                }
                if let Some(c) = model.cells.iter().find(|c| !grid.contains(**c)) {
                    return Err(SimError::Model(format!("feature ({}, {}) lies outside the grid", c.x, c.y)));
                }
                Some(FeatureStore::from_cells(grid, world.features, &model.cells, &clearance)?)
            }
            _ if learning => Some(FeatureStore::new(grid, world.features)),
            _ => None,
        };
        let ctl = env
            .robots
            .iter()
            .map(|r| RobotCtl {
                leg: Leg::None,
                leg_start: r.cell(&grid),
                heading: None,
                steps: 0,
            })
            .collect();
        Ok(Sim {
            params: world.params,
            name: world.name.clone(),
            start_tick: env.tick,
            target_fields: vec![None; env.targets.len()],
            assigned: vec![None; env.targets.len()],
            occupancy,
            clearance,
            ctl,
            store,
            rows: Vec::new(),
            snapshots: Vec::new(),
            collisions: Vec::new(),
            rescues: Vec::new(),
            relax_log: Vec::new(),
            fallbacks: 0,
            heuristic_legs: 0,
            rep_complete_tick: None,
            first_heuristic_tick: None,
            exploration_done: false,
            env,
            opts,
        })
    }

    fn grid(&self) -> GridSpec {
        self.env.grid
    }

    fn learning(&self) -> bool {
        self.opts.method == Method::Flbbinn && self.opts.model.is_none()
    }

    /// Heuristic planning is available once the feature set represents
    /// every free cell and its graph is connected, or no exploration remains
    /// that could connect it.
    fn planning_enabled(&self) -> bool {
        let settled = !self.learning() || !self.opts.explore || self.exploration_done;
        self.opts.method == Method::Flbbinn
            && self
                .store
                .as_ref()
                .is_some_and(|s| s.is_complete() && (s.is_connected() || settled))
    }

    fn robot_cells(&self) -> Vec<Cell> {
        let g = self.grid();
        self.env.robots.iter().map(|r| r.cell(&g)).collect()
    }

    fn goal_cell(&self, goal: Goal) -> Cell {
        match goal {
            Goal::Target(t) => self.env.target_cell(t),
            Goal::Virtual(c) => c,
        }
    }

    fn plan(&self, from: Cell, to: Cell) -> Option<Vec<Point>> {
        let store = self.store.as_ref()?;
        let cells = store.cells();
        let path = plan_via_matrix(&PlanQuery {
            start: from,
            target: to,
            features: &cells,
            matrix: store.matrix(),
            field: &self.clearance,
        })
        .ok()?;
        let g = self.grid();
        Some(path.waypoints.iter().map(|&c| g.center(c)).collect())
    }

    fn run(mut self) -> Result<RunOutcome, SimError> {
        let grid = self.grid();
        let limit = self.opts.ticks_max.unwrap_or(10 * (grid.width + grid.height) as u64);
        let mut first = true;
        loop {
            if !first {
                self.env.step();
            }
            first = false;
            let tick = self.env.tick;
            let mut iters = 0usize;
            let changed = self.update_world(tick, &mut iters)?;
            self.assign(tick, &mut iters)?;
            let before: Vec<(Cell, Point)> = self
                .env
                .robots
                .iter()
                .map(|r| (r.cell(&grid), r.pose.point()))
                .collect();
            for i in 0..self.env.robots.len() {
                self.act(i, tick, changed, &mut iters)?;
            }
            self.detect_arrivals(tick)?;
            self.extract_features(tick, &before, changed)?;
            self.relax_log.push(iters);
            if let Some(every) = self.opts.snapshot_every.filter(|&e| e > 0) {
                if (tick - self.start_tick) % every == 0 {
                    for (i, c) in self.ctl.iter().enumerate() {
                        if let Leg::Field { field, .. } = &c.leg {
                            self.snapshots.push(Snapshot {
                                tick,
                                robot: i,
                                activity: field.activities(),
                            });
                        }
                    }
                }
            }
            if self.finished() || tick - self.start_tick >= limit {
                break;
            }
        }
        Ok(self.finish())
    }

    fn finished(&self) -> bool {
        if !self.env.all_rescued() {
            return false;
        }
        if self.learning() && self.opts.explore {
            let done = self.store.as_ref().is_some_and(|s| s.is_complete() && s.is_connected());
            return done || self.exploration_done;
        }
        true
    }

    /// Recomputes occupancy-dependent state. Returns whether obstacles changed.
    fn update_world(&mut self, tick: u64, iters: &mut usize) -> Result<bool, SimError> {
        let grid = self.grid();
        let occ = self.env.occupancy_at(tick);
        let changed = occ != self.occupancy;
        if changed {
            self.occupancy = occ;
            // Rebuilt from rest: relaxing the old field leaves sub-tolerance
            // negative residue where obstacles used to be.
            let (field, n) = relaxed_clearance(grid, &self.occupancy, &self.params)?;
            self.clearance = field;
            *iters += n;
            for r in 0..self.env.robots.len() {
                let cell = self.env.robots[r].cell(&grid);
                if !self.env.robots[r].halted && self.occupancy[grid.index(cell)] {
                    self.env.robots[r].halted = true;
                    self.ctl[r].leg = Leg::None;
                    self.collisions.push(CollisionEvent {
                        tick,
                        robot: r,
                        cell,
                        kind: CollisionKind::Crushed,
                    });
                }
            }
        }
        Ok(changed)
    }

    fn active_robots(&self) -> Vec<usize> {
        (0..self.env.robots.len())
            .filter(|&r| !self.env.robots[r].halted)
            .collect()
    }

    fn assign(&mut self, tick: u64, iters: &mut usize) -> Result<(), SimError> {
        let grid = self.grid();
        let pending: Vec<usize> = (0..self.env.targets.len())
            .filter(|&t| self.env.targets[t].status == TargetStatus::Pending)
            .collect();
        if pending.is_empty() {
            return Ok(());
        }
        let robots = self.active_robots();
        if robots.is_empty() {
            return Ok(());
        }
        let cells = self.robot_cells();
        let mut by_field = Vec::new();
        let mut columns: Vec<(usize, Vec<f64>)> = Vec::new();
        if self.planning_enabled() {
            for &t in &pending {
                let to = self.env.target_cell(t);
                let col: Vec<f64> = robots
                    .iter()
                    .map(|&r| match self.plan(cells[r], to) {
                        Some(p) => -p.windows(2).map(|w| w[0].distance(w[1])).sum::<f64>(),
                        None => f64::NEG_INFINITY,
                    })
                    .collect();
                if col.iter().any(|v| v.is_finite()) {
                    columns.push((t, col));
                } else {
                    by_field.push(t);
                }
            }
        } else {
            by_field = pending;
        }
        for &t in &by_field {
            let inputs = external_input(&grid, &self.occupancy, &[self.env.target_cell(t)], &[], self.params.e)?;
            let field = match &mut self.target_fields[t] {
                Some(f) => {
                    f.set_inputs(&inputs)?;
                    f
                }
                slot @ None => slot.insert(field_with(grid, &inputs)?),
            };
            *iters += relax_for(field, &self.params, self.params.relax_iters)?;
            let f = &*field;
            columns.push((t, robots.iter().map(|&r| f.activity(cells[r])).collect()));
        }
        let z = ActivityMatrix {
            targets: columns.iter().map(|(t, _)| *t).collect(),
            entries: (0..robots.len())
                .map(|i| columns.iter().map(|(_, col)| col[i]).collect())
                .collect(),
        };
        let assignment = assign_targets(&z);
        for (t, r) in assignment.pairs {
            if let Some(i) = r {
                self.env.targets[t].status = TargetStatus::Assigned;
                self.assigned[t] = Some(robots[i]);
                self.env.robots[robots[i]].assigned_target.get_or_insert(t);
                self.target_fields[t] = None;
            }
        }
        let _ = tick;
        Ok(())
    }

    /// Next goal for an idle robot: its best assigned target, or during
    /// exploration a virtual target in unrepresented space.
    fn choose_goal(&mut self, r: usize) -> Result<Option<Goal>, SimError> {
        let grid = self.grid();
        let here = self.env.robots[r].cell(&grid);
        let mine: Vec<usize> = (0..self.env.targets.len())
            .filter(|&t| self.env.targets[t].status == TargetStatus::Assigned && self.assigned[t] == Some(r))
            .filter(|&t| !self.ctl.iter().any(|c| c.leg.goal() == Some(Goal::Target(t))))
            .collect();
        if !mine.is_empty() {
            // Serve the target that is nearest along the feature graph when
            // planning, otherwise the one nearest in a straight line; the
            // field entries that won the assignment are all near-equal once
            // activity has settled.
            let key = |t: usize| -> f64 {
                let to = self.env.target_cell(t);
                match self.planning_enabled().then(|| self.plan(here, to)).flatten() {
                    Some(p) => p.windows(2).map(|w| w[0].distance(w[1])).sum(),
                    None => grid.distance(here, to),
                }
            };
            let best = mine
                .iter()
                .copied()
                .min_by(|&a, &b| key(a).total_cmp(&key(b)).then(a.cmp(&b)))
                .unwrap();
            self.env.robots[r].assigned_target = Some(best);
            return Ok(Some(Goal::Target(best)));
        }
        if self.learning() && self.opts.explore && self.env.all_rescued() && !self.exploration_done {
            let someone_exploring = self
                .ctl
                .iter()
                .any(|c| matches!(c.leg.goal(), Some(Goal::Virtual(_))));
            if someone_exploring {
                return Ok(None);
            }
            let store = self.store.as_ref().unwrap();
            let next = if !store.is_complete() {
                best_exploration_cell(store, &self.clearance)?
            } else if !store.is_connected() {
                best_bridge_cell(store, &self.clearance)
            } else {
                return Ok(None);
            };
            match next {
                Some(cell) => {
                    // Send the active robot nearest to it.
                    let nearest = self
                        .active_robots()
                        .into_iter()
                        .filter(|&i| matches!(self.ctl[i].leg, Leg::None))
                        .min_by(|&a, &b| {
                            let da = grid.distance(self.env.robots[a].cell(&grid), cell);
                            let db = grid.distance(self.env.robots[b].cell(&grid), cell);
                            da.total_cmp(&db).then(a.cmp(&b))
                        });
                    if nearest == Some(r) {
                        return Ok(Some(Goal::Virtual(cell)));
                    }
                }
                None => self.exploration_done = true,
            }
        }
        Ok(None)
    }

    fn field_leg(&self, r: usize, goal: Goal, tick: u64) -> Result<Leg, SimError> {
        let inputs = self.nav_inputs(r, goal)?;
        Ok(Leg::Field {
            goal,
            field: field_with(self.grid(), &inputs)?,
            started: tick,
        })
    }

    fn nav_inputs(&self, r: usize, goal: Goal) -> Result<Vec<f64>, SimError> {
        let cells = self.robot_cells();
        let others: Vec<Cell> = (0..cells.len()).filter(|&i| i != r).map(|i| cells[i]).collect();
        let goal_cell = self.goal_cell(goal);
        let others: Vec<Cell> = others.into_iter().filter(|&c| c != goal_cell).collect();
        Ok(external_input(&self.grid(), &self.occupancy, &[goal_cell], &others, self.params.e)?)
    }

    fn start_leg(&mut self, r: usize, goal: Goal, tick: u64) -> Result<(), SimError> {
        let grid = self.grid();
        let here = self.env.robots[r].cell(&grid);
        self.ctl[r].leg_start = here;
        if self.planning_enabled() {
            if let Some(points) = self.plan(here, self.goal_cell(goal)) {
                self.heuristic_legs += 1;
                self.first_heuristic_tick.get_or_insert(tick);
                self.ctl[r].leg = Leg::Path {
                    goal,
                    points,
                    next: 1,
                };
                return Ok(());
            }
            self.fallbacks += 1;
        }
        self.ctl[r].leg = self.field_leg(r, goal, tick)?;
        Ok(())
    }

    fn record(&mut self, r: usize, tick: u64, idle: bool) {
        let p = self.env.robots[r].pose;
        self.rows.push(TrajectoryRow {
            tick,
            robot: r,
            x: p.x,
            y: p.y,
            theta: p.theta.to_degrees(),
            idle,
        });
    }

    fn act(&mut self, r: usize, tick: u64, changed: bool, iters: &mut usize) -> Result<(), SimError> {
        let grid = self.grid();
        if self.env.robots[r].halted {
            let pose = self.env.robots[r].pose;
            self.env.robots[r].trajectory.push(pose);
            self.record(r, tick, false);
            return Ok(());
        }
        if matches!(self.ctl[r].leg, Leg::None) {
            if let Some(goal) = self.choose_goal(r)? {
                self.start_leg(r, goal, tick)?;
            }
        }
        // A changed world invalidates planned segments that are no longer clear.
        if changed {
            if let Leg::Path { goal, points, next } = &self.ctl[r].leg {
                let here = self.env.robots[r].cell(&grid);
                let mut from = here;
                let mut ok = true;
                for p in &points[*next..] {
                    let to = grid.cell_of(*p).unwrap();
                    if !collision_free_link(from, to, &self.clearance) {
                        ok = false;
                        break;
                    }
                    from = to;
                }
                if !ok {
                    let goal = *goal;
                    self.fallbacks += 1;
                    self.ctl[r].leg = self.field_leg(r, goal, tick)?;
                }
            }
        }
        let others: Vec<Cell> = self
            .robot_cells()
            .into_iter()
            .enumerate()
            .filter(|&(i, _)| i != r)
            .map(|(_, c)| c)
            .collect();
        let pending_exist = self.env.targets.iter().any(|t| t.is_live());
        let mut leg = std::mem::replace(&mut self.ctl[r].leg, Leg::None);
        let idle = match &mut leg {
            Leg::None => {
                let pose = self.env.robots[r].pose;
                // Waiting for an assignment counts as idle; having nothing
                // left to do does not.
                let waiting = pending_exist;
                if waiting {
                    self.env.robots[r].idle_steps += 1;
                }
                self.env.robots[r].trajectory.push(pose);
                waiting
            }
            Leg::Field { goal, field, .. } => {
                let inputs = self.nav_inputs(r, *goal)?;
                field.set_inputs(&inputs)?;
                *iters += relax_for(field, &self.params, self.params.relax_iters)?;
                let here = self.env.robots[r].cell(&grid);
                let next = match command_neuron(field, here, self.env.robots[r].pose.theta) {
                    Command::Move(c) => c,
                    Command::Idle => here,
                };
                // Detach the robot so the world can be read while it moves.
                let mut robot = self.env.robots.remove(r);
                let outcome = advance_robot(&mut robot, next, &self.env, tick, &others);
                self.env.robots.insert(r, robot);
                match outcome {
                    StepOutcome::Moved => {
                        self.ctl[r].steps += 1;
                        false
                    }
                    StepOutcome::Idle => true,
                    StepOutcome::Collision(cell) => {
                        self.collisions.push(CollisionEvent {
                            tick,
                            robot: r,
                            cell,
                            kind: CollisionKind::Blocked,
                        });
                        false
                    }
                }
            }
            Leg::Path { points, next, .. } => {
                let from = self.env.robots[r].pose.point();
                // Head for the farthest waypoint already in clear sight.
                let here = self.env.robots[r].cell(&grid);
                if let Some(j) = (*next + 1..points.len())
                    .rev()
                    .find(|&j| collision_free_link(here, grid.cell_of(points[j]).unwrap(), &self.clearance))
                {
                    *next = j;
                }
                let aim = points[*next];
                let d = from.distance(aim);
                let step = self.env.robots[r].speed;
                let to = if d <= step + 1e-12 {
                    aim
                } else {
                    Point::new(from.x + (aim.x - from.x) * step / d, from.y + (aim.y - from.y) * step / d)
                };
                let cell = grid.cell_of(to).unwrap();
                let blocked = cell != self.env.robots[r].cell(&grid)
                    && (!self.env.is_cell_free(cell, tick) || others.contains(&cell));
                let robot = &mut self.env.robots[r];
                if blocked {
                    robot.trajectory.push(robot.pose);
                    self.collisions.push(CollisionEvent {
                        tick,
                        robot: r,
                        cell,
                        kind: CollisionKind::Blocked,
                    });
                } else {
                    let theta = (to.y - from.y).atan2(to.x - from.x);
                    robot.pose = Pose { x: to.x, y: to.y, theta };
                    robot.trajectory.push(robot.pose);
                    self.ctl[r].steps += 1;
                    if to == aim && *next + 1 < points.len() {
                        *next += 1;
                    }
                }
                false
            }
        };
        self.ctl[r].leg = leg;
        self.record(r, tick, idle);
        Ok(())
    }

    fn detect_arrivals(&mut self, tick: u64) -> Result<(), SimError> {
        let grid = self.grid();
        let cells = self.robot_cells();
        let mut rescued_any = false;
        for t in 0..self.env.targets.len() {
            if !self.env.targets[t].is_live() {
                continue;
            }
            let tc = self.env.target_cell(t);
            let Some(r) = (0..cells.len()).find(|&r| cells[r] == tc && !self.env.robots[r].halted) else {
                continue;
            };
            self.env.targets[t].status = TargetStatus::Rescued;
            self.target_fields[t] = None;
            self.rescues.push(RescueEvent { tick, target: t, robot: r });
            rescued_any = true;
            for i in 0..self.ctl.len() {
                if self.ctl[i].leg.goal() == Some(Goal::Target(t)) {
                    self.ctl[i].leg = Leg::None;
                    self.env.robots[i].assigned_target = None;
                }
            }
            if self.learning() {
                let start = self.ctl[r].leg_start;
                let store = self.store.as_mut().unwrap();
                store.offer(Some(start), &self.clearance, false)?;
                store.offer(Some(tc), &self.clearance, false)?;
            }
        }
        if rescued_any {
            // Queued targets go back to the pool and are re-auctioned from
            // fresh fields; targets being driven to stay with their robot.
            for t in 0..self.env.targets.len() {
                if self.env.targets[t].status == TargetStatus::Assigned
                    && !self.ctl.iter().any(|c| c.leg.goal() == Some(Goal::Target(t)))
                {
                    self.env.targets[t].status = TargetStatus::Pending;
                    self.assigned[t] = None;
                }
                self.target_fields[t] = None;
            }
            for r in 0..self.env.robots.len() {
                if self.ctl[r].leg.goal().is_none() {
                    self.env.robots[r].assigned_target = None;
                }
            }
        }
        // Exploration legs end on arrival or when they run out of time.
        let budget = 2 * (grid.width + grid.height) as u64;
        for r in 0..self.ctl.len() {
            let Some(Goal::Virtual(cell)) = self.ctl[r].leg.goal() else {
                continue;
            };
            let arrived = cells[r] == cell;
            let stale = match &self.ctl[r].leg {
                Leg::Field { started, .. } => tick - started >= budget,
                _ => false,
            };
            if arrived {
                self.store.as_mut().unwrap().offer(Some(cell), &self.clearance, false)?;
            }
            if arrived || stale {
                self.ctl[r].leg = Leg::None;
            }
        }
        Ok(())
    }

    fn extract_features(&mut self, tick: u64, before: &[(Cell, Point)], changed: bool) -> Result<(), SimError> {
        if !self.learning() {
            return Ok(());
        }
        let grid = self.grid();
        let store = self.store.as_mut().unwrap();
        let mut refreshed = false;
        for (r, &(cell, from)) in before.iter().enumerate() {
            let to = self.env.robots[r].pose.point();
            if to == from {
                continue;
            }
            let heading = (to.y - from.y).atan2(to.x - from.x);
            if let Some(prev) = self.ctl[r].heading {
                store.observe_turn(prev, heading, cell, &self.clearance, changed && !refreshed)?;
                refreshed = true;
            }
            self.ctl[r].heading = Some(heading);
        }
        if changed && !refreshed {
            store.refresh(&self.clearance)?;
        }
        if store.is_complete() {
            self.rep_complete_tick.get_or_insert(tick);
        }
        let _ = grid;
        Ok(())
    }

    fn finish(self) -> RunOutcome {
        let grid = self.grid();
        let robots: Vec<RobotReport> = self
            .env
            .robots
            .iter()
            .zip(&self.ctl)
            .map(|(r, c)| RobotReport {
                id: r.id,
                path_length: r.path_length(),
                steps: c.steps,
                idle_steps: r.idle_steps,
                halted: r.halted,
            })
            .collect();
        let k = self.store.as_ref().map_or(0, |s| s.features().len());
        let rep = self.store.as_ref().map_or(0.0, |s| s.representativeness().ratio);
        let history = self
            .store
            .as_ref()
            .map(|s| s.history().iter().map(|h| h.representativeness).collect())
            .unwrap_or_default();
        let replacements = self.store.as_ref().map(|s| s.replacements().to_vec()).unwrap_or_default();
        let rescued = self.rescues.len();
        let report = RescueReport {
            scenario: self.name.clone(),
            method: self.opts.method,
            seed: self.opts.seed,
            neurons: match self.opts.method {
                Method::Binn => grid.len(),
                Method::Flbbinn => k,
            },
            features: k,
            path_length: robots.iter().map(|r| r.path_length).sum(),
            steps: robots.iter().map(|r| r.steps).sum(),
            idle_steps: robots.iter().map(|r| r.idle_steps).sum(),
            robots,
            rescued,
            targets: self.env.targets.len(),
            rescue_order: self.rescues.clone(),
            ticks: self.env.tick - self.start_tick,
            complete: self.env.all_rescued(),
            collisions: self.collisions.clone(),
            relax_iterations: self.relax_log.clone(),
            fallbacks: self.fallbacks,
            heuristic_legs: self.heuristic_legs,
            representativeness: rep,
            representativeness_history: history,
            representation_complete_tick: self.rep_complete_tick,
            first_heuristic_tick: self.first_heuristic_tick,
            replacements,
        };
        let model = if self.learning() {
            self.store.as_ref().map(FeatureModel::from_store)
        } else {
            None
        };
        RunOutcome {
            report,
            trajectory: self.rows,
            snapshots: self.snapshots,
            model,
            clearance: self.clearance,
            env: self.env,
        }
    }
}

/// The unrepresented cell whose admission would represent the most
/// additional cells. Only cells that pass the spacing rule qualify; ties go
/// to row-major order. `None` when no cell adds anything.
pub fn best_exploration_cell(store: &FeatureStore, field: &NeuralField) -> Result<Option<Cell>, FeatureError> {
    let grid = *field.grid();
    let params = store.params();
    let base = store.representativeness().represented;
    let mut represented = vec![false; grid.len()];
    for f in store.features() {
        for &c in &f.represented {
            represented[grid.index(c)] = true;
        }
    }
    let mut best: Option<(Cell, usize)> = None;
    for cell in grid.cells() {
        if represented[grid.index(cell)] || field.activity(cell) < 0.0 {
            continue;
        }
        if !crate::feature_learning::distance_channel(cell, store.features(), params.th1, &grid) {
            continue;
        }
        let mut trial = store.features().to_vec();
        trial.push(crate::feature_learning::FeatureNeuron::new(cell));
        let rep = crate::feature_learning::representativeness(&mut trial, field)?;
        if rep.represented > base && best.map_or(true, |(_, b)| rep.represented > b) {
            best = Some((cell, rep.represented));
        }
    }
    Ok(best.map(|(c, _)| c))
}

/// The cell passing the spacing rule that has clear links into the most
/// separate parts of the feature graph, at least two. Ties go to row-major
/// order.
pub fn best_bridge_cell(store: &FeatureStore, field: &NeuralField) -> Option<Cell> {
    let grid = *field.grid();
    let params = store.params();
    let components = crate::feature_learning::graph_components(store.matrix());
    let mut seen = Vec::new();
    let mut best: Option<(Cell, usize)> = None;
    for cell in grid.cells() {
        if field.activity(cell) < 0.0
            || !crate::feature_learning::distance_channel(cell, store.features(), params.th1, &grid)
        {
            continue;
        }
        seen.clear();
        for (f, &comp) in store.features().iter().zip(&components) {
            if !seen.contains(&comp) && crate::feature_learning::collision_free_link(cell, f.cell, field) {
                seen.push(comp);
            }
        }
        if seen.len() >= 2 && best.map_or(true, |(_, b)| seen.len() > b) {
            best = Some((cell, seen.len()));
        }
    }
    best.map(|(c, _)| c)
}

/// Runs one rescue mission to completion or the tick limit.
pub fn run_rescue(world: &World, opts: &RunOptions) -> Result<RunOutcome, SimError> {
    Sim::new(world, opts.clone())?.run()
}

/// The world reduced to a single robot at the probe start and a single
/// target at the probe goal, with obstacles as they stand at `tick`.
pub fn probe_world(world: &World, tick: u64) -> Result<World, SimError> {
    let (start, target) = world.probe.ok_or(SimError::NoProbe)?;
    single_query_world(world, start, target, tick)
}

/// The world reduced to one robot at the trap start heading for the trap
/// goal, from tick 0 so that obstacle motion still unfolds.
pub fn trap_world(world: &World) -> Result<World, SimError> {
    let trap = world.trap.ok_or(SimError::NoTrap)?;
    let p = |a: [f64; 2]| Point::new(a[0], a[1]);
    single_query_world(world, p(trap.start), p(trap.target), 0)
}

fn single_query_world(world: &World, start: Point, target: Point, tick: u64) -> Result<World, SimError> {
    let mut w = world.clone();
    let grid = w.env.grid;
    let c = grid.center(grid.cell_of(start).ok_or(SimError::OutOfGrid)?);
    let mut robot = RobotState::new(0, Pose { x: c.x, y: c.y, theta: 0.0 }, w.motion.step());
    robot.trajectory = vec![robot.pose];
    w.env.robots = vec![robot];
    w.env.targets = vec![crate::environment::Target {
        id: 0,
        position: target,
        status: TargetStatus::Pending,
    }];
    w.env.tick = tick;
    Ok(w)
}

/// One row of a benchmark table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkRow {
    pub scenario: String,
    pub method: Method,
    pub neurons: usize,
    /// Probe query path length.
    pub path_length_m: f64,
    pub steps: u64,
    pub idle_steps: u64,
    /// Total path length of the multi-target rescue run.
    pub rescue_path_length_m: f64,
    pub rescued: usize,
    pub targets: usize,
    pub collisions: usize,
    pub complete: bool,
}

/// Everything measured for one scenario.
#[derive(Debug, Clone)]
pub struct ScenarioBenchmark {
    pub binn_rescue: RunOutcome,
    pub learning: RunOutcome,
    pub binn_probe: RunOutcome,
    pub flbbinn_probe: RunOutcome,
    pub rows: [BenchmarkRow; 2],
}

/// Rescue run with each method, then the probe query in the settled world:
/// binn navigates it by field, flbbinn plans it over the learned matrix.
pub fn benchmark_scenario(world: &World, seed: u64) -> Result<ScenarioBenchmark, SimError> {
    let mut opts = RunOptions::new(Method::Binn);
    opts.seed = seed;
    let binn_rescue = run_rescue(world, &opts)?;
    let mut lopts = RunOptions::new(Method::Flbbinn);
    lopts.seed = seed;
    lopts.explore = true;
    let learning = run_rescue(world, &lopts)?;
    let model = learning.model.clone().unwrap_or(FeatureModel {
        cells: Vec::new(),
        matrix: FeatureMatrix::zeros(0),
        degrees: Vec::new(),
        represented: Vec::new(),
    });
    let settled = learning.env.tick;
    let probe = probe_world(world, settled)?;
    let binn_probe = run_rescue(&probe, &opts)?;
    let mut popts = RunOptions::new(Method::Flbbinn);
    popts.seed = seed;
    popts.model = Some(model);
    let flbbinn_probe = run_rescue(&probe, &popts)?;
    let row = |method, neurons, probe: &RunOutcome, rescue: &RunOutcome| BenchmarkRow {
        scenario: world.name.clone(),
        method,
        neurons,
        path_length_m: probe.report.path_length,
        steps: probe.report.steps,
        idle_steps: probe.report.idle_steps,
        rescue_path_length_m: rescue.report.path_length,
        rescued: rescue.report.rescued,
        targets: rescue.report.targets,
        collisions: rescue.report.collisions.len() + probe.report.collisions.len(),
        complete: rescue.report.complete && probe.report.complete,
    };
    let rows = [
        row(Method::Binn, world.env.grid.len(), &binn_probe, &binn_rescue),
        row(Method::Flbbinn, learning.report.features, &flbbinn_probe, &learning),
    ];
    Ok(ScenarioBenchmark {
        binn_rescue,
        learning,
        binn_probe,
        flbbinn_probe,
        rows,
    })
}

pub fn run_benchmark(worlds: &[World], seed: u64) -> Result<Vec<BenchmarkRow>, SimError> {
    let mut rows = Vec::new();
    for w in worlds {
        rows.extend(benchmark_scenario(w, seed)?.rows);
    }
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SweepParam {
    #[serde(rename = "A")]
    A,
    #[serde(rename = "mu")]
    Mu,
    #[serde(rename = "sigma")]
    Sigma,
}

impl FromStr for SweepParam {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "A" | "a" => Ok(SweepParam::A),
            "mu" => Ok(SweepParam::Mu),
            "sigma" => Ok(SweepParam::Sigma),
            other => Err(format!("unknown sweep parameter {other:?}; expected A, mu or sigma")),
        }
    }
}

impl SweepParam {
    pub fn apply(self, params: &ShuntingParams, value: f64) -> ShuntingParams {
        let mut p = *params;
        match self {
            SweepParam::A => p.a = value,
            SweepParam::Mu => p.mu = value,
            SweepParam::Sigma => p.sigma = value,
        }
        p
    }
}

#[derive(Debug, Clone)]
pub struct SweepSpec {
    pub param: SweepParam,
    pub values: Vec<f64>,
    pub base: World,
}

#[derive(Debug, Clone)]
pub struct SweepEntry {
    pub value: f64,
    /// Set when the value violates the parameter constraints.
    pub error: Option<String>,
    pub outcome: Option<RunOutcome>,
    /// Steady-state field with every target exciting and no robots.
    pub landscape: Option<NeuralField>,
    pub saturated_fraction: f64,
    pub min_clearance: Option<f64>,
}

/// Steady-state landscape of all targets over the obstacles, no robots.
pub fn converged_landscape(world: &World, params: &ShuntingParams) -> Result<NeuralField, SimError> {
    let env = &world.env;
    let targets: Vec<Cell> = (0..env.targets.len()).map(|t| env.target_cell(t)).collect();
    let inputs = external_input(&env.grid, &env.occupancy(), &targets, &[], params.e)?;
    let mut f = field_with(env.grid, &inputs)?;
    relax_for(&mut f, params, CONVERGE_ITERS)?;
    Ok(f)
}

/// Fraction of non-obstacle cells at or above `level`.
pub fn fraction_at_least(field: &NeuralField, blocked: &[bool], level: f64) -> f64 {
    let grid = *field.grid();
    let (mut n, mut hit) = (0usize, 0usize);
    for c in grid.cells() {
        if blocked[grid.index(c)] {
            continue;
        }
        n += 1;
        if field.activity(c) >= level {
            hit += 1;
        }
    }
    if n == 0 {
        0.0
    } else {
        hit as f64 / n as f64
    }
}

/// Activity level counted as saturated, relative to `B`. The steady state
/// of a cell driven by positive inputs is strictly below `B`, so the bound
/// itself is never reached.
pub const SATURATION_LEVEL: f64 = 0.8;

pub fn run_sweep(spec: &SweepSpec, seed: u64) -> Vec<SweepEntry> {
    spec.values
        .iter()
        .map(|&value| {
            let params = spec.param.apply(&spec.base.params, value);
            let fail = |e: String| SweepEntry {
                value,
                error: Some(e),
                outcome: None,
                landscape: None,
                saturated_fraction: 0.0,
                min_clearance: None,
            };
            if let Err(e) = params.validate() {
                return fail(e.to_string());
            }
            let mut world = spec.base.clone();
            world.params = params;
            let mut opts = RunOptions::new(Method::Binn);
            opts.seed = seed;
            let outcome = match run_rescue(&world, &opts) {
                Ok(o) => o,
                Err(e) => return fail(e.to_string()),
            };
            let landscape = match converged_landscape(&world, &params) {
                Ok(f) => f,
                Err(e) => return fail(e.to_string()),
            };
            let blocked = world.env.occupancy();
            let saturated_fraction = fraction_at_least(&landscape, &blocked, SATURATION_LEVEL * params.b);
            let min_clearance = trajectory_clearance(&outcome, &world);
            SweepEntry {
                value,
                error: None,
                outcome: Some(outcome),
                landscape: Some(landscape),
                saturated_fraction,
                min_clearance,
            }
        })
        .collect()
}

/// Smallest distance, in cells, from any robot's trajectory polyline to the
/// center of any cell that was blocked at that tick.
pub fn trajectory_clearance(outcome: &RunOutcome, world: &World) -> Option<f64> {
    let grid = world.env.grid;
    let mut best: Option<f64> = None;
    let start = world.env.tick;
    for robot in &outcome.env.robots {
        for (i, w) in robot.trajectory.windows(2).enumerate() {
            let tick = start + i as u64;
            let blocked = world.env.occupancy_at(tick);
            let (a, b) = (w[0].point(), w[1].point());
            for c in grid.cells().filter(|c| blocked[grid.index(*c)]) {
                let d = point_segment_distance(grid.center(c), a, b) / grid.cell_length;
                if best.map_or(true, |x| d < x) {
                    best = Some(d);
                }
            }
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::load_scenario;

    fn open(w: usize, h: usize, robots: &[(f64, f64)], targets: &[(f64, f64)]) -> World {
        let r: Vec<String> = robots.iter().map(|(x, y)| format!(r#"{{"x":{x},"y":{y}}}"#)).collect();
        let t: Vec<String> = targets.iter().map(|(x, y)| format!(r#"{{"x":{x},"y":{y}}}"#)).collect();
        load_scenario(&format!(
            r#"{{"name":"t","grid":{{"width":{w},"height":{h}}},"robots":[{}],"targets":[{}]}}"#,
            r.join(","),
            t.join(",")
        ))
        .unwrap()
    }

    #[test]
    fn empty_map_diagonal_rescue() {
        let w = open(10, 10, &[(1.0, 1.0)], &[(8.0, 8.0)]);
        let out = run_rescue(&w, &RunOptions::new(Method::Binn)).unwrap();
        let r = &out.report;
        assert!(r.complete);
        assert_eq!(r.robots[0].steps, 7);
        assert!((r.path_length - 7.0 * 2f64.sqrt()).abs() < 1e-9);
        assert!(r.collisions.is_empty());
    }

    #[test]
    fn reports_are_deterministic() {
        let w = open(20, 20, &[(1.0, 1.0), (20.0, 20.0)], &[(5.0, 15.0), (15.0, 5.0), (10.0, 10.0)]);
        let a = run_rescue(&w, &RunOptions::new(Method::Binn)).unwrap();
        let b = run_rescue(&w, &RunOptions::new(Method::Binn)).unwrap();
        assert_eq!(
            serde_json::to_string(&a.report).unwrap(),
            serde_json::to_string(&b.report).unwrap()
        );
        assert!(a.report.complete);
        assert_eq!(a.report.rescued, 3);
    }

    #[test]
    fn path_length_is_sum_of_displacements() {
        let w = open(20, 20, &[(1.0, 1.0), (20.0, 20.0)], &[(5.0, 15.0), (15.0, 5.0)]);
        let out = run_rescue(&w, &RunOptions::new(Method::Binn)).unwrap();
        for r in &out.env.robots {
            let rows: Vec<_> = out.trajectory.iter().filter(|row| row.robot == r.id).collect();
            let mut sum = 0.0;
            let mut prev = r.trajectory[0].point();
            for row in rows {
                let p = Point::new(row.x, row.y);
                sum += prev.distance(p);
                prev = p;
            }
            assert!((sum - r.path_length()).abs() < 1e-9);
        }
    }

    #[test]
    fn tick_limit_flags_incomplete() {
        let w = open(30, 30, &[(1.0, 1.0)], &[(30.0, 30.0)]);
        let mut opts = RunOptions::new(Method::Binn);
        opts.ticks_max = Some(5);
        let out = run_rescue(&w, &opts).unwrap();
        assert!(!out.report.complete);
        assert_eq!(out.report.ticks, 5);
    }

    #[test]
    fn method_parses() {
        assert_eq!("binn".parse::<Method>().unwrap(), Method::Binn);
        assert!("bin".parse::<Method>().is_err());
    }
}
