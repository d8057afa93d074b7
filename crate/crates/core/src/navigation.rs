//! Command-neuron steering, robot kinematics and activity-based task assignment.

use crate::environment::{Environment, Pose, RobotState};
use crate::grid::{wrap_angle, Cell, GridSpec};
use crate::neural_field::NeuralField;

/// Relative tolerance under which two activities count as equal.
pub const TIE_RTOL: f64 = 1e-13;

#[inline]
pub fn activities_tie(a: f64, b: f64) -> bool {
    a == b || (a - b).abs() <= TIE_RTOL * a.abs().max(b.abs())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Move(Cell),
    /// No neighbor offers positive progress; wait for activity to arrive.
    Idle,
}

fn heading_between(grid: &GridSpec, from: Cell, to: Cell) -> f64 {
    let (a, b) = (grid.center(from), grid.center(to));
    (b.y - a.y).atan2(b.x - a.x)
}

/// Picks the neighbor with maximal activity. Ties go to the smallest heading
/// change from `heading`, then to row-major order. The robot idles when its
/// own activity is non-positive and no neighbor beats it.
pub fn command_neuron(field: &NeuralField, current: Cell, heading: f64) -> Command {
    let grid = *field.grid();
    let mut best: Option<(Cell, f64, f64)> = None;
    for n in grid.neighbors(current) {
        let z = field.activity(n);
        let turn = wrap_angle(heading_between(&grid, current, n) - heading).abs();
        let better = match best {
            None => true,
            Some((bc, bz, bturn)) => {
                if activities_tie(z, bz) {
                    if (turn - bturn).abs() > 1e-9 {
                        turn < bturn
                    } else {
                        n.row_major_key() < bc.row_major_key()
                    }
                } else {
                    z > bz
                }
            }
        };
        if better {
            best = Some((n, z, turn));
        }
    }
    let here = field.activity(current);
    match best {
        Some((cell, z, _)) if !(here <= 0.0 && (z <= here || activities_tie(z, here))) => {
            Command::Move(cell)
        }
        _ => Command::Idle,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepOutcome {
    Moved,
    Idle,
    /// The commanded cell was not free; the robot stays put.
    Collision(Cell),
}

/// Moves the robot onto the center of `next` (current cell or an 8-neighbor).
/// Heading points at the new cell and the step length equals the
/// center-to-center distance. Every call appends one pose to the trajectory.
pub fn advance_robot(
    robot: &mut RobotState,
    next: Cell,
    env: &Environment,
    tick: u64,
    occupied_by_robots: &[Cell],
) -> StepOutcome {
    let grid = env.grid;
    let current = robot.cell(&grid);
    debug_assert!(current.is_neighbor_or_same(next), "{current:?} -> {next:?}");
    if next == current {
        robot.idle_steps += 1;
        robot.trajectory.push(robot.pose);
        return StepOutcome::Idle;
    }
    if !env.is_cell_free(next, tick) || occupied_by_robots.contains(&next) {
        robot.trajectory.push(robot.pose);
        return StepOutcome::Collision(next);
    }
    let target = grid.center(next);
    let theta = (target.y - robot.pose.y).atan2(target.x - robot.pose.x);
    let step = robot.pose.point().distance(target);
    let x = robot.pose.x + step * theta.cos();
    let y = robot.pose.y + step * theta.sin();
    debug_assert!((x - target.x).abs() < 1e-9 && (y - target.y).abs() < 1e-9);
    // Land exactly on the center; cos/sin leave ulp-level residue.
    robot.pose = Pose {
        x: target.x,
        y: target.y,
        theta,
    };
    robot.trajectory.push(robot.pose);
    StepOutcome::Moved
}

/// Activity of each robot's cell in each live target's field.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivityMatrix {
    /// Target ids, one per column.
    pub targets: Vec<usize>,
    /// `entries[robot][column]`.
    pub entries: Vec<Vec<f64>>,
}

impl ActivityMatrix {
    pub fn robots(&self) -> usize {
        self.entries.len()
    }

    pub fn scaled(&self, factor: f64) -> Self {
        ActivityMatrix {
            targets: self.targets.clone(),
            entries: self
                .entries
                .iter()
                .map(|row| row.iter().map(|v| v * factor).collect())
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum NavigationError {
    #[error("no relaxed field supplied for pending target {0}")]
    MissingField(usize),
}

/// Reads each robot's cell activity out of each pending target's field.
/// `fields` pairs a target id with its field.
pub fn build_activity_matrix(
    robots: &[RobotState],
    pending_targets: &[usize],
    fields: &[(usize, &NeuralField)],
) -> Result<ActivityMatrix, NavigationError> {
    let mut columns = Vec::with_capacity(pending_targets.len());
    for &t in pending_targets {
        let field = fields
            .iter()
            .find(|(id, _)| *id == t)
            .map(|(_, f)| *f)
            .ok_or(NavigationError::MissingField(t))?;
        columns.push(field);
    }
    let entries = robots
        .iter()
        .map(|r| {
            columns
                .iter()
                .map(|f| f.activity(r.cell(f.grid())))
                .collect()
        })
        .collect();
    Ok(ActivityMatrix {
        targets: pending_targets.to_vec(),
        entries,
    })
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Assignment {
    /// `(target id, robot index or None when tied)`, in matrix column order.
    pub pairs: Vec<(usize, Option<usize>)>,
    /// Per robot, its targets ordered by descending activity.
    pub queues: Vec<Vec<usize>>,
}

impl Assignment {
    pub fn robot_for(&self, target: usize) -> Option<usize> {
        self.pairs
            .iter()
            .find(|(t, _)| *t == target)
            .and_then(|(_, r)| *r)
    }

    pub fn unassigned(&self) -> impl Iterator<Item = usize> + '_ {
        self.pairs.iter().filter(|(_, r)| r.is_none()).map(|(t, _)| *t)
    }
}

/// Gives each target to the robot holding the strict column maximum. A tie
/// at the top leaves the target unassigned for this round.
pub fn assign_targets(z: &ActivityMatrix) -> Assignment {
    let robots = z.robots();
    let mut pairs = Vec::with_capacity(z.targets.len());
    let mut queues: Vec<Vec<(usize, f64)>> = vec![Vec::new(); robots];
    for (col, &target) in z.targets.iter().enumerate() {
        let mut winner: Option<(usize, f64)> = None;
        let mut tied = false;
        for (i, row) in z.entries.iter().enumerate() {
            let v = row[col];
            match winner {
                None => winner = Some((i, v)),
                Some((_, best)) if activities_tie(v, best) => tied = true,
                Some((_, best)) if v > best => {
                    winner = Some((i, v));
                    tied = false;
                }
                _ => {}
            }
        }
        match winner {
            Some((i, v)) if !tied => {
                pairs.push((target, Some(i)));
                queues[i].push((target, v));
            }
            _ => pairs.push((target, None)),
        }
    }
    let queues = queues
        .into_iter()
        .map(|mut q| {
            q.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            q.into_iter().map(|(t, _)| t).collect()
        })
        .collect();
    Assignment { pairs, queues }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Point;
    use crate::neural_field::{external_input, relax_for, ShuntingParams};

    fn grid(n: usize) -> GridSpec {
        GridSpec::new(n, n, 1.0).unwrap()
    }

    fn robot_at(g: &GridSpec, c: Cell) -> RobotState {
        let p = g.center(c);
        RobotState::new(0, Pose { x: p.x, y: p.y, theta: 0.0 }, 1.0)
    }

    #[test]
    fn single_positive_neighbor_wins() {
        let g = grid(5);
        let mut f = NeuralField::new(g);
        f.set_activity(Cell::new(3, 1), 0.2);
        assert_eq!(command_neuron(&f, Cell::new(2, 2), 0.0), Command::Move(Cell::new(3, 1)));
    }

    #[test]
    fn flat_zero_field_idles() {
        let f = NeuralField::new(grid(5));
        assert_eq!(command_neuron(&f, Cell::new(2, 2), 0.0), Command::Idle);
    }

    #[test]
    fn ties_prefer_current_heading() {
        let g = grid(5);
        let mut f = NeuralField::new(g);
        for c in g.cells() {
            f.set_activity(c, 0.5);
        }
        let north = std::f64::consts::FRAC_PI_2;
        assert_eq!(command_neuron(&f, Cell::new(2, 2), north), Command::Move(Cell::new(2, 3)));
        assert_eq!(command_neuron(&f, Cell::new(2, 2), 0.0), Command::Move(Cell::new(3, 2)));
    }

    #[test]
    fn adjacent_robot_steps_onto_target() {
        let g = grid(10);
        let target = Cell::new(6, 6);
        let input = external_input(&g, &vec![false; g.len()], &[target], &[], 70.0).unwrap();
        let mut f = NeuralField::new(g);
        f.set_inputs(&input).unwrap();
        relax_for(&mut f, &ShuntingParams::default(), 5000).unwrap();
        for n in g.neighbors(target) {
            // Enumerate: the target must hold the largest activity among n's neighbors.
            let best = g
                .neighbors(n)
                .max_by(|a, b| f.activity(*a).total_cmp(&f.activity(*b)))
                .unwrap();
            assert_eq!(best, target);
            assert_eq!(command_neuron(&f, n, 1.0), Command::Move(target));
        }
    }

    #[test]
    fn advance_kinematics() {
        let g = grid(10);
        let env = Environment::new(g);
        let mut r = robot_at(&g, Cell::new(4, 4));
        assert_eq!(advance_robot(&mut r, Cell::new(5, 4), &env, 0, &[]), StepOutcome::Moved);
        assert_eq!(r.pose.point(), Point::new(5.5, 4.5));
        assert_eq!(r.pose.theta, 0.0);
        assert_eq!(advance_robot(&mut r, Cell::new(5, 5), &env, 0, &[]), StepOutcome::Moved);
        assert!((r.pose.theta - std::f64::consts::FRAC_PI_2).abs() < 1e-12);
        assert_eq!(r.pose.point(), Point::new(5.5, 5.5));
        assert_eq!(advance_robot(&mut r, Cell::new(6, 6), &env, 0, &[]), StepOutcome::Moved);
        assert_eq!(r.pose.point(), Point::new(6.5, 6.5));
        assert!((r.pose.theta - std::f64::consts::FRAC_PI_4).abs() < 1e-12);
        assert!((r.path_length() - (2.0 + std::f64::consts::SQRT_2)).abs() < 1e-12);
        assert_eq!(advance_robot(&mut r, Cell::new(6, 6), &env, 0, &[]), StepOutcome::Idle);
        assert_eq!(r.idle_steps, 1);
    }

    #[test]
    fn blocked_step_is_a_collision() {
        let g = grid(10);
        let mut env = Environment::new(g);
        env.obstacles.push(crate::environment::Obstacle::static_cells(
            vec![Cell::new(5, 4)],
            Point::new(5.5, 4.5),
        ));
        let mut r = robot_at(&g, Cell::new(4, 4));
        assert_eq!(
            advance_robot(&mut r, Cell::new(5, 4), &env, 0, &[]),
            StepOutcome::Collision(Cell::new(5, 4))
        );
        assert_eq!(r.cell(&g), Cell::new(4, 4));
        assert_eq!(
            advance_robot(&mut r, Cell::new(4, 5), &env, 0, &[Cell::new(4, 5)]),
            StepOutcome::Collision(Cell::new(4, 5))
        );
    }

    fn matrix(entries: Vec<Vec<f64>>) -> ActivityMatrix {
        let targets = (0..entries[0].len()).collect();
        ActivityMatrix { targets, entries }
    }

    #[test]
    fn assignment_rules() {
        let a = assign_targets(&matrix(vec![vec![0.6, 0.3], vec![0.4, 0.3]]));
        assert_eq!(a.robot_for(0), Some(0));
        assert_eq!(a.robot_for(1), None);
        assert_eq!(a.unassigned().collect::<Vec<_>>(), vec![1]);

        let single = assign_targets(&matrix(vec![vec![0.1, -0.2, 0.0]]));
        assert!(single.pairs.iter().all(|(_, r)| *r == Some(0)));
        assert_eq!(single.queues[0], vec![0, 2, 1]);
    }

    #[test]
    fn three_robot_tie_below_max_does_not_block() {
        let a = assign_targets(&matrix(vec![vec![0.2], vec![0.2], vec![0.5]]));
        assert_eq!(a.robot_for(0), Some(2));
        let b = assign_targets(&matrix(vec![vec![0.5], vec![0.2], vec![0.5]]));
        assert_eq!(b.robot_for(0), None);
    }

    #[test]
    fn missing_field_is_an_error() {
        let g = grid(4);
        let r = vec![robot_at(&g, Cell::new(0, 0))];
        assert_eq!(
            build_activity_matrix(&r, &[3], &[]),
            Err(NavigationError::MissingField(3))
        );
    }
}
