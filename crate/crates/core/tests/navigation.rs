use neurorescue::navigation::{
    advance_robot, assign_targets, build_activity_matrix, command_neuron, ActivityMatrix, Command, StepOutcome,
};
use neurorescue::neural_field::{external_input, relax_for, ShuntingParams};
use neurorescue::{Cell, Environment, GridSpec, NeuralField, Obstacle, Point, Pose, RobotState};
use proptest::prelude::*;

/// Converged single-target field. The decay is raised above the total lateral
/// weight so the steady state falls off monotonically from the target.
fn relaxed(g: GridSpec, blocked: &[Cell], target: Cell) -> NeuralField {
    let p = ShuntingParams {
        a: 10.0,
        ..ShuntingParams::default()
    };
    let mut mask = vec![false; g.len()];
    for &c in blocked {
        mask[g.index(c)] = true;
    }
    let mut f = NeuralField::new(g);
    f.set_inputs(&external_input(&g, &mask, &[target], &[], p.e).unwrap())
        .unwrap();
    relax_for(&mut f, &p, 50_000).unwrap();
    f
}

fn robot_at(g: &GridSpec, id: usize, c: Cell) -> RobotState {
    let p = g.center(c);
    RobotState::new(id, Pose { x: p.x, y: p.y, theta: 0.0 }, 1.0)
}

/// Follows the command neuron until it arrives, idles or `limit` steps pass.
fn follow(env: &Environment, field: &NeuralField, start: Cell, target: Cell, limit: usize) -> Vec<Cell> {
    let g = env.grid;
    let mut r = robot_at(&g, 0, start);
    let mut cells = vec![start];
    for _ in 0..limit {
        if r.cell(&g) == target {
            break;
        }
        match command_neuron(field, r.cell(&g), r.pose.theta) {
            Command::Move(next) => {
                assert_eq!(advance_robot(&mut r, next, env, 0, &[]), StepOutcome::Moved);
                cells.push(next);
            }
            Command::Idle => break,
        }
    }
    cells
}

fn activity_matrix() -> impl Strategy<Value = ActivityMatrix> {
    (1usize..5, 1usize..5).prop_flat_map(|(robots, targets)| {
        prop::collection::vec(prop::collection::vec(-1.0f64..1.0, targets), robots).prop_map(move |entries| {
            ActivityMatrix {
                targets: (0..targets).collect(),
                entries,
            }
        })
    })
}

proptest! {
    #[test]
    fn assignment_ignores_positive_scale(z in activity_matrix(), k in 1e-3f64..1e3) {
        prop_assert_eq!(assign_targets(&z), assign_targets(&z.scaled(k)));
    }

    #[test]
    fn assigned_robot_holds_column_maximum(z in activity_matrix()) {
        let a = assign_targets(&z);
        for (col, &(_, robot)) in a.pairs.iter().enumerate() {
            if let Some(r) = robot {
                for row in &z.entries {
                    prop_assert!(row[col] <= z.entries[r][col]);
                }
            }
        }
    }

    #[test]
    fn open_grid_approach_is_direct(sx in 0usize..16, sy in 0usize..16, tx in 0usize..16, ty in 0usize..16) {
        let g = GridSpec::new(16, 16, 1.0).unwrap();
        let (start, target) = (Cell::new(sx, sy), Cell::new(tx, ty));
        let f = relaxed(g, &[], target);
        let cells = follow(&Environment::new(g), &f, start, target, 100);
        prop_assert_eq!(*cells.last().unwrap(), target);
        prop_assert_eq!(cells.len() - 1, start.chebyshev(target));
        for w in cells.windows(2) {
            prop_assert!(w[1].chebyshev(target) < w[0].chebyshev(target));
        }
    }
}

#[test]
fn path_around_wall_stays_free() {
    let g = GridSpec::new(24, 24, 1.0).unwrap();
    let wall: Vec<Cell> = (4..20).map(|y| Cell::new(12, y)).collect();
    let mut env = Environment::new(g);
    env.obstacles.push(Obstacle::static_cells(wall.clone(), Point::new(12.5, 12.0)));
    let (start, target) = (Cell::new(4, 12), Cell::new(20, 12));
    let f = relaxed(g, &wall, target);
    let cells = follow(&env, &f, start, target, 200);
    assert_eq!(*cells.last().unwrap(), target);
    assert!(cells.iter().all(|c| !wall.contains(c)));
    assert!(cells.len() - 1 > start.chebyshev(target));
}

#[test]
fn walled_robot_sees_less_activity() {
    let g = GridSpec::new(30, 30, 1.0).unwrap();
    let target = Cell::new(15, 15);
    let wall: Vec<Cell> = (8..23).map(|y| Cell::new(10, y)).collect();
    let f = relaxed(g, &wall, target);
    let behind = robot_at(&g, 0, Cell::new(7, 15));
    let open = robot_at(&g, 1, Cell::new(23, 15));
    let z = build_activity_matrix(&[behind, open], &[0], &[(0, &f)]).unwrap();
    assert!(z.entries[0][0] < z.entries[1][0]);
    assert_eq!(assign_targets(&z).robot_for(0), Some(1));
}
