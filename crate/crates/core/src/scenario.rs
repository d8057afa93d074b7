//! Scenario documents: JSON schema, validation and conversion to a world.
//!
//! Coordinates follow the usual grid-map convention of the rescue scenarios:
//! robots, targets and obstacle centers are metric points, and a point with
//! integer coordinate `n` lies in the `n`-th cell (cell index `n - 1`).
//! Obstacle cell lists use the same 1-based cell numbering. Angles are
//! degrees in files and radians in memory.

use crate::environment::{Environment, Obstacle, ObstacleKind, ObstacleShape, Pose, RobotState, Target, TargetStatus};
use crate::feature_learning::FeatureParams;
use crate::grid::{Cell, GridError, GridSpec, Point};
use crate::neural_field::{ParamError, ShuntingParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ScenarioError {
    #[error("scenario does not match the schema: {0}")]
    Schema(String),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Params(#[from] ParamError),
    #[error("feature threshold {name} must be positive and finite, got {value}")]
    FeatureParam { name: &'static str, value: f64 },
    #[error("robot speed and simulation step must be positive, got v={v}, dt_sim={dt_sim}")]
    Motion { v: f64, dt_sim: f64 },
    #[error("robot {0} lies outside the grid")]
    RobotOutOfBounds(usize),
    #[error("target {0} lies outside the grid")]
    TargetOutOfBounds(usize),
    #[error("robot {0} starts inside an obstacle")]
    RobotInObstacle(usize),
    #[error("target {0} lies inside an obstacle")]
    TargetInObstacle(usize),
    #[error("robots {0} and {1} start on the same cell")]
    RobotsOverlap(usize, usize),
    #[error("obstacle {index}: {reason}")]
    Obstacle { index: usize, reason: &'static str },
    #[error("{0} is outside the grid or inside an obstacle")]
    Probe(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridDoc {
    pub width: usize,
    pub height: usize,
    #[serde(default = "default_cell_length")]
    pub cell_length: f64,
}

fn default_cell_length() -> f64 {
    1.0
}

/// Every tunable constant; omitted keys take the simulation defaults.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ParamsDoc {
    #[serde(alias = "A")]
    pub a: f64,
    #[serde(alias = "B")]
    pub b: f64,
    #[serde(alias = "D")]
    pub d: f64,
    pub mu: f64,
    #[serde(alias = "E")]
    pub e: f64,
    pub sigma: f64,
    pub beta: f64,
    pub r0: f64,
    pub dt_neural: f64,
    pub relax_iters: usize,
    pub tol: f64,
    pub th_theta_deg: f64,
    pub th1: f64,
    pub th2: f64,
    pub fusion_degree: usize,
    /// Robot speed, meters per second.
    pub v: f64,
    /// Seconds per simulation tick.
    pub dt_sim: f64,
}

impl Default for ParamsDoc {
    fn default() -> Self {
        ParamsDoc::from_parts(&ShuntingParams::default(), &FeatureParams::default(), &Motion::default())
    }
}

impl ParamsDoc {
    pub fn from_parts(s: &ShuntingParams, f: &FeatureParams, m: &Motion) -> Self {
        ParamsDoc {
            a: s.a,
            b: s.b,
            d: s.d,
            mu: s.mu,
            e: s.e,
            sigma: s.sigma,
            beta: s.beta,
            r0: s.r0,
            dt_neural: s.dt_neural,
            relax_iters: s.relax_iters,
            tol: s.tol,
            th_theta_deg: f.th_theta_deg,
            th1: f.th1,
            th2: f.th2,
            fusion_degree: f.fusion_degree,
            v: m.v,
            dt_sim: m.dt_sim,
        }
    }

    pub fn shunting(&self) -> ShuntingParams {
        ShuntingParams {
            a: self.a,
            b: self.b,
            d: self.d,
            mu: self.mu,
            e: self.e,
            sigma: self.sigma,
            beta: self.beta,
            r0: self.r0,
            dt_neural: self.dt_neural,
            relax_iters: self.relax_iters,
            tol: self.tol,
        }
    }

    pub fn features(&self) -> FeatureParams {
        FeatureParams {
            th_theta_deg: self.th_theta_deg,
            th1: self.th1,
            th2: self.th2,
            fusion_degree: self.fusion_degree,
        }
    }

    pub fn motion(&self) -> Motion {
        Motion {
            v: self.v,
            dt_sim: self.dt_sim,
        }
    }
}

/// Robot motion constants for polyline following.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Motion {
    pub v: f64,
    pub dt_sim: f64,
}

impl Default for Motion {
    fn default() -> Self {
        Motion { v: 1.0, dt_sim: 1.0 }
    }
}

impl Motion {
    /// Distance covered per tick.
    pub fn step(&self) -> f64 {
        self.v * self.dt_sim
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RobotDoc {
    pub x: f64,
    pub y: f64,
    #[serde(default)]
    pub theta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetDoc {
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KindDoc {
    Static,
    Moving,
    Sudden,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObstacleDoc {
    pub kind: KindDoc,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub center: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    /// 1-based cell coordinates.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub cells: Vec<[usize; 2]>,
    /// Inclusive 1-based cell rectangles `[x0, y0, x1, y1]`, added to `cells`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub rects: Vec<[usize; 4]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub velocity: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stop_center: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trigger_tick: Option<u64>,
}

/// An extra start/goal pair used for single-query comparisons after a run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeDoc {
    pub start: [f64; 2],
    pub target: [f64; 2],
}

/// Axis-aligned metric rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Region {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl Region {
    pub fn contains(&self, p: Point) -> bool {
        p.x >= self.x0 && p.x <= self.x1 && p.y >= self.y0 && p.y <= self.y1
    }

    /// Indices where `path` crosses the boundary, with `true` for entering.
    /// A path starting inside records an entry at index 0.
    pub fn transitions(&self, path: &[Point]) -> Vec<(usize, bool)> {
        let mut inside = false;
        let mut out = Vec::new();
        for (i, &p) in path.iter().enumerate() {
            let now = self.contains(p);
            if now != inside {
                out.push((i, now));
                inside = now;
            }
        }
        out
    }
}

/// A concave pocket together with a start/goal pair whose direct route
/// leads into it while the world is still changing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Trap {
    pub region: Region,
    pub start: [f64; 2],
    pub target: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default)]
    pub name: String,
    pub grid: GridDoc,
    #[serde(default)]
    pub params: ParamsDoc,
    #[serde(default)]
    pub robots: Vec<RobotDoc>,
    #[serde(default)]
    pub targets: Vec<TargetDoc>,
    #[serde(default)]
    pub obstacles: Vec<ObstacleDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probe: Option<ProbeDoc>,
    /// Concave pocket a robot is expected to enter and leave.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trap: Option<Trap>,
}

/// A validated, fully built world.
#[derive(Debug, Clone, PartialEq)]
pub struct World {
    pub name: String,
    pub env: Environment,
    pub params: ShuntingParams,
    pub features: FeatureParams,
    pub motion: Motion,
    pub probe: Option<(Point, Point)>,
    pub trap: Option<Trap>,
}

fn pt(p: [f64; 2]) -> Point {
    Point::new(p[0], p[1])
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        serde_json::from_str(text).map_err(|e| ScenarioError::Schema(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario documents always serialize")
    }

    /// Validates the document and builds the world it describes.
    pub fn build(&self) -> Result<World, ScenarioError> {
        let grid = GridSpec::new(self.grid.width, self.grid.height, self.grid.cell_length)?;
        let params = self.params.shunting();
        params.validate()?;
        let features = self.params.features();
        for (name, value) in [
            ("th_theta_deg", features.th_theta_deg),
            ("th1", features.th1),
            ("th2", features.th2),
        ] {
            if !(value.is_finite() && value > 0.0) {
                return Err(ScenarioError::FeatureParam { name, value });
            }
        }
        let motion = self.params.motion();
        if !(motion.v > 0.0 && motion.dt_sim > 0.0 && motion.v.is_finite() && motion.dt_sim.is_finite()) {
            return Err(ScenarioError::Motion {
                v: motion.v,
                dt_sim: motion.dt_sim,
            });
        }

        let mut env = Environment::new(grid);
        for (index, doc) in self.obstacles.iter().enumerate() {
            env.obstacles.push(build_obstacle(&grid, index, doc)?);
        }
        let blocked = env.occupancy_at(0);
        let free = |p: Point| grid.cell_of(p).map(|c| !blocked[grid.index(c)]);

        for (i, r) in self.robots.iter().enumerate() {
            let p = Point::new(r.x, r.y);
            match free(p) {
                None => return Err(ScenarioError::RobotOutOfBounds(i)),
                Some(false) => return Err(ScenarioError::RobotInObstacle(i)),
                Some(true) => {}
            }
            let c = grid.center(grid.cell_of(p).unwrap());
            let pose = Pose {
                x: c.x,
                y: c.y,
                theta: r.theta.to_radians(),
            };
            env.robots.push(RobotState::new(i, pose, motion.step()));
        }
        for i in 0..env.robots.len() {
            for j in i + 1..env.robots.len() {
                if env.robots[i].cell(&grid) == env.robots[j].cell(&grid) {
                    return Err(ScenarioError::RobotsOverlap(i, j));
                }
            }
        }
        for (i, t) in self.targets.iter().enumerate() {
            let p = Point::new(t.x, t.y);
            match free(p) {
                None => return Err(ScenarioError::TargetOutOfBounds(i)),
                Some(false) => return Err(ScenarioError::TargetInObstacle(i)),
                Some(true) => {}
            }
            env.targets.push(Target {
                id: i,
                position: p,
                status: TargetStatus::Pending,
            });
        }
        let probe = match self.probe {
            Some(doc) => {
                let (s, t) = (pt(doc.start), pt(doc.target));
                if free(s) != Some(true) {
                    return Err(ScenarioError::Probe("probe start"));
                }
                if free(t) != Some(true) {
                    return Err(ScenarioError::Probe("probe target"));
                }
                Some((s, t))
            }
            None => None,
        };
        if let Some(trap) = self.trap {
            if free(pt(trap.start)) != Some(true) {
                return Err(ScenarioError::Probe("trap start"));
            }
            if free(pt(trap.target)) != Some(true) {
                return Err(ScenarioError::Probe("trap target"));
            }
        }
        Ok(World {
            name: self.name.clone(),
            env,
            params,
            features,
            motion,
            probe,
            trap: self.trap,
        })
    }

    /// Describes an existing world. Building the result yields an equal world.
    pub fn from_world(world: &World) -> Scenario {
        let env = &world.env;
        let grid = env.grid;
        let obstacles = env
            .obstacles
            .iter()
            .map(|o| {
                let (kind, velocity, stop_center, trigger_tick) = match o.kind {
                    ObstacleKind::Static => (KindDoc::Static, None, None, None),
                    ObstacleKind::Moving {
                        velocity,
                        stop_center,
                    } => (
                        KindDoc::Moving,
                        Some([velocity.x, velocity.y]),
                        Some([stop_center.x, stop_center.y]),
                        None,
                    ),
                    ObstacleKind::Sudden { trigger_tick } => (KindDoc::Sudden, None, None, Some(trigger_tick)),
                };
                let (lambda, cells) = match &o.shape {
                    ObstacleShape::Disc { lambda } => (Some(*lambda), Vec::new()),
                    ObstacleShape::Cells(cells) => (None, cells.iter().map(|c| [c.x + 1, c.y + 1]).collect()),
                };
                ObstacleDoc {
                    kind,
                    center: Some([o.center.x, o.center.y]),
                    lambda,
                    cells,
                    rects: Vec::new(),
                    velocity,
                    stop_center,
                    trigger_tick,
                }
            })
            .collect();
        Scenario {
            name: world.name.clone(),
            grid: GridDoc {
                width: grid.width,
                height: grid.height,
                cell_length: grid.cell_length,
            },
            params: ParamsDoc::from_parts(&world.params, &world.features, &world.motion),
            robots: env
                .robots
                .iter()
                .map(|r| RobotDoc {
                    x: r.pose.x,
                    y: r.pose.y,
                    theta: r.pose.theta.to_degrees(),
                })
                .collect(),
            targets: env
                .targets
                .iter()
                .map(|t| TargetDoc {
                    x: t.position.x,
                    y: t.position.y,
                })
                .collect(),
            obstacles,
            probe: world.probe.map(|(s, t)| ProbeDoc {
                start: [s.x, s.y],
                target: [t.x, t.y],
            }),
            trap: world.trap,
        }
    }
}

fn build_obstacle(grid: &GridSpec, index: usize, doc: &ObstacleDoc) -> Result<Obstacle, ScenarioError> {
    let err = |reason| ScenarioError::Obstacle { index, reason };
    let mut cells = Vec::new();
    let to_cell = |x: usize, y: usize| -> Result<Cell, ScenarioError> {
        if x == 0 || y == 0 || x > grid.width || y > grid.height {
            return Err(err("cell outside the grid"));
        }
        Ok(Cell::new(x - 1, y - 1))
    };
    for &[x, y] in &doc.cells {
        cells.push(to_cell(x, y)?);
    }
    for &[x0, y0, x1, y1] in &doc.rects {
        if x0 > x1 || y0 > y1 {
            return Err(err("rectangle corners out of order"));
        }
        for y in y0..=y1 {
            for x in x0..=x1 {
                cells.push(to_cell(x, y)?);
            }
        }
    }
    cells.sort_by_key(|c| c.row_major_key());
    cells.dedup();

    let shape = match (doc.lambda, cells.is_empty()) {
        (Some(_), false) => return Err(err("give either lambda or cells, not both")),
        (Some(lambda), true) => {
            if !(lambda > 0.0 && lambda.is_finite()) {
                return Err(err("lambda must be positive"));
            }
            ObstacleShape::Disc { lambda }
        }
        (None, false) => ObstacleShape::Cells(cells),
        (None, true) => return Err(err("needs lambda or at least one cell")),
    };
    let center = match (doc.center, &shape) {
        (Some(c), _) => pt(c),
        (None, ObstacleShape::Cells(cells)) => {
            let n = cells.len() as f64;
            let sx: f64 = cells.iter().map(|&c| grid.center(c).x).sum();
            let sy: f64 = cells.iter().map(|&c| grid.center(c).y).sum();
            Point::new(sx / n, sy / n)
        }
        (None, ObstacleShape::Disc { .. }) => return Err(err("analytic obstacles need a center")),
    };
    if !(center.x.is_finite() && center.y.is_finite()) {
        return Err(err("center must be finite"));
    }
    let kind = match doc.kind {
        KindDoc::Static => {
            if doc.velocity.is_some() || doc.stop_center.is_some() || doc.trigger_tick.is_some() {
                return Err(err("static obstacles take no motion or trigger"));
            }
            ObstacleKind::Static
        }
        KindDoc::Moving => {
            let (Some(v), Some(stop)) = (doc.velocity, doc.stop_center) else {
                return Err(err("moving obstacles need velocity and stop_center"));
            };
            if !v.iter().chain(stop.iter()).all(|x| x.is_finite()) {
                return Err(err("motion must be finite"));
            }
            ObstacleKind::Moving {
                velocity: pt(v),
                stop_center: pt(stop),
            }
        }
        KindDoc::Sudden => {
            let Some(trigger_tick) = doc.trigger_tick else {
                return Err(err("sudden obstacles need trigger_tick"));
            };
            ObstacleKind::Sudden { trigger_tick }
        }
    };
    Ok(Obstacle { kind, center, shape })
}

/// Parses and builds in one go.
pub fn load_scenario(text: &str) -> Result<World, ScenarioError> {
    Scenario::from_json(text)?.build()
}

/// Scenarios shipped with the crate, by name.
pub const BUILTIN: &[(&str, &str)] = &[
    ("sweep_room", include_str!("../../../scenarios/sweep_room.json")),
    ("static", include_str!("../../../scenarios/static.json")),
    ("moving", include_str!("../../../scenarios/moving.json")),
    ("sudden", include_str!("../../../scenarios/sudden.json")),
    ("house_open", include_str!("../../../scenarios/house_open.json")),
    ("house_closed", include_str!("../../../scenarios/house_closed.json")),
];

pub fn builtin(name: &str) -> Option<World> {
    BUILTIN
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, text)| load_scenario(text).expect("built-in scenarios are valid"))
}

/// Shape of a randomly generated world.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RandomSpec {
    pub width: usize,
    pub height: usize,
    pub robots: usize,
    pub targets: usize,
    pub obstacles: usize,
    /// Largest obstacle rectangle side, cells.
    pub max_side: usize,
}

impl Default for RandomSpec {
    fn default() -> Self {
        RandomSpec {
            width: 40,
            height: 40,
            robots: 2,
            targets: 4,
            obstacles: 6,
            max_side: 6,
        }
    }
}

/// Seeded random world: rectangular static obstacles, then robots and targets
/// drawn by rejection sampling from free cells that are at least two cells
/// away from every obstacle and from each other.
pub fn random_scenario(seed: u64, spec: &RandomSpec) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = (spec.width, spec.height);
    let mut blocked = vec![false; w * h];
    let mut obstacles = Vec::new();
    for _ in 0..spec.obstacles {
        let sw = rng.gen_range(1..=spec.max_side.max(1));
        let sh = rng.gen_range(1..=spec.max_side.max(1));
        let x0 = rng.gen_range(1..=w.saturating_sub(sw).max(1));
        let y0 = rng.gen_range(1..=h.saturating_sub(sh).max(1));
        let (x1, y1) = ((x0 + sw - 1).min(w), (y0 + sh - 1).min(h));
        for y in y0..=y1 {
            for x in x0..=x1 {
                blocked[(y - 1) * w + (x - 1)] = true;
            }
        }
        obstacles.push(ObstacleDoc {
            kind: KindDoc::Static,
            center: None,
            lambda: None,
            cells: Vec::new(),
            rects: vec![[x0, y0, x1, y1]],
            velocity: None,
            stop_center: None,
            trigger_tick: None,
        });
    }
    let clear = |blocked: &[bool], x: usize, y: usize| {
        let (x, y) = (x as isize, y as isize);
        (-2..=2).all(|dy| {
            (-2..=2).all(|dx| {
                let (nx, ny) = (x + dx, y + dy);
                nx < 1 || ny < 1 || nx > w as isize || ny > h as isize || !blocked[(ny as usize - 1) * w + nx as usize - 1]
            })
        })
    };
    let mut taken: Vec<(usize, usize)> = Vec::new();
    let mut draw = |rng: &mut ChaCha8Rng| -> Option<(usize, usize)> {
        for _ in 0..10_000 {
            let (x, y) = (rng.gen_range(1..=w), rng.gen_range(1..=h));
            let spaced = taken.iter().all(|&(a, b)| a.abs_diff(x).max(b.abs_diff(y)) >= 2);
            if spaced && clear(&blocked, x, y) {
                taken.push((x, y));
                return Some((x, y));
            }
        }
        None
    };
    let robots = (0..spec.robots)
        .filter_map(|_| draw(&mut rng))
        .map(|(x, y)| RobotDoc {
            x: x as f64,
            y: y as f64,
            theta: 0.0,
        })
        .collect();
    let targets = (0..spec.targets)
        .filter_map(|_| draw(&mut rng))
        .map(|(x, y)| TargetDoc {
            x: x as f64,
            y: y as f64,
        })
        .collect();
    Scenario {
        name: format!("random-{seed}"),
        grid: GridDoc {
            width: w,
            height: h,
            cell_length: 1.0,
        },
        params: ParamsDoc::default(),
        robots,
        targets,
        obstacles,
        probe: None,
        trap: None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "grid": {"width": 70, "height": 70},
        "robots": [{"x": 1, "y": 35}],
        "targets": [{"x": 8, "y": 35}]
    }"#;

    #[test]
    fn minimal_document_takes_defaults() {
        let w = load_scenario(MINIMAL).unwrap();
        assert_eq!(w.params, ShuntingParams::default());
        assert_eq!(w.features, FeatureParams::default());
        assert_eq!(w.env.grid.cell_length, 1.0);
        assert_eq!(w.env.robots[0].cell(&w.env.grid), Cell::new(0, 34));
        assert_eq!(w.env.target_cell(0), Cell::new(7, 34));
    }

    #[test]
    fn uppercase_parameter_keys() {
        let text = r#"{"grid": {"width": 5, "height": 5}, "params": {"A": 10, "mu": 0.5}}"#;
        let w = load_scenario(text).unwrap();
        assert_eq!(w.params.a, 10.0);
        assert_eq!(w.params.mu, 0.5);
    }

    #[test]
    fn validation_errors_are_distinct() {
        let robot_in_wall = r#"{"grid": {"width": 10, "height": 10},
            "robots": [{"x": 3, "y": 3}],
            "obstacles": [{"kind": "static", "cells": [[3, 3]]}]}"#;
        assert_eq!(load_scenario(robot_in_wall), Err(ScenarioError::RobotInObstacle(0)));

        let target_in_disc = r#"{"grid": {"width": 10, "height": 10},
            "targets": [{"x": 5, "y": 5}],
            "obstacles": [{"kind": "static", "center": [4.5, 4.5], "lambda": 4}]}"#;
        assert_eq!(load_scenario(target_in_disc), Err(ScenarioError::TargetInObstacle(0)));

        let unknown_key = r#"{"grid": {"width": 10, "height": 10}, "robotz": []}"#;
        assert!(matches!(load_scenario(unknown_key), Err(ScenarioError::Schema(_))));

        let outside = r#"{"grid": {"width": 10, "height": 10}, "robots": [{"x": 11, "y": 3}]}"#;
        assert_eq!(load_scenario(outside), Err(ScenarioError::RobotOutOfBounds(0)));

        let mover = r#"{"grid": {"width": 10, "height": 10},
            "obstacles": [{"kind": "moving", "cells": [[2, 2]]}]}"#;
        assert!(matches!(load_scenario(mover), Err(ScenarioError::Obstacle { index: 0, .. })));

        let unstable = r#"{"grid": {"width": 10, "height": 10}, "params": {"dt_neural": 0.1}}"#;
        assert!(matches!(load_scenario(unstable), Err(ScenarioError::Params(_))));
    }

    #[test]
    fn closed_door_blocks_from_the_start() {
        let text = r#"{"grid": {"width": 10, "height": 10},
            "robots": [{"x": 3, "y": 3}],
            "obstacles": [{"kind": "sudden", "trigger_tick": 0, "cells": [[3, 3]]}]}"#;
        assert_eq!(load_scenario(text), Err(ScenarioError::RobotInObstacle(0)));
    }

    #[test]
    fn round_trip_rebuilds_equal_world() {
        for (name, text) in BUILTIN {
            let w = load_scenario(text).unwrap();
            let again = Scenario::from_json(&Scenario::from_world(&w).to_json())
                .unwrap()
                .build()
                .unwrap();
            assert_eq!(w, again, "{name}");
        }
    }

    #[test]
    fn random_scenarios_are_seeded_and_valid() {
        let spec = RandomSpec::default();
        let a = random_scenario(7, &spec);
        assert_eq!(a, random_scenario(7, &spec));
        assert_ne!(a, random_scenario(8, &spec));
        for seed in 0..20 {
            let s = random_scenario(seed, &spec);
            let w = s.build().unwrap();
            assert_eq!(w.env.robots.len(), spec.robots);
            assert_eq!(w.env.targets.len(), spec.targets);
        }
    }
}
