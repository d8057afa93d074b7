use neurorescue::feature_learning::{collision_free_link, FeatureParams, FeatureStore, PassOutcome};
use neurorescue::scenario::{random_scenario, RandomSpec};
use neurorescue::sim::clearance_field;
use neurorescue::{Cell, NeuralField};
use proptest::prelude::*;

fn small_world(seed: u64) -> NeuralField {
    let spec = RandomSpec {
        width: 24,
        height: 24,
        robots: 1,
        targets: 1,
        obstacles: 4,
        max_side: 5,
    };
    let w = random_scenario(seed, &spec).build().unwrap();
    clearance_field(w.env.grid, &w.env.occupancy(), &w.params).unwrap()
}

fn check_store(store: &FeatureStore, field: &NeuralField) -> Result<(), TestCaseError> {
    let grid = *field.grid();
    let cells = store.cells();
    let m = store.matrix();
    prop_assert_eq!(m.size(), cells.len());
    for g in 0..cells.len() {
        prop_assert_eq!(m.get(g, g), 0.0);
        prop_assert_eq!(m.degree(g), store.features()[g].degree);
        for h in 0..cells.len() {
            prop_assert_eq!(m.get(g, h), m.get(h, g));
            if g != h {
                prop_assert!(grid.distance(cells[g], cells[h]) > store.params().th1);
                if m.get(g, h) > 0.0 {
                    prop_assert!(collision_free_link(cells[g], cells[h], field));
                }
            }
        }
    }
    for f in store.features() {
        prop_assert!(field.activity(f.cell) >= 0.0);
        for &c in &f.represented {
            prop_assert!(field.activity(c) >= 0.0);
            prop_assert!(collision_free_link(f.cell, c, field));
        }
    }
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn passes_keep_the_store_sound(
        seed in 0u64..1000,
        offers in prop::collection::vec((0usize..24, 0usize..24), 1..120),
    ) {
        let field = small_world(seed);
        let mut store = FeatureStore::new(*field.grid(), FeatureParams::default());
        let mut last = 0.0;
        for (x, y) in offers {
            let outcome = store.offer(Some(Cell::new(x, y)), &field, false).unwrap();
            let r = store.representativeness().ratio;
            prop_assert!(r >= last, "{:?} lowered representativeness {} -> {}", outcome, last, r);
            last = r;
            check_store(&store, &field)?;
        }
        for rep in store.replacements() {
            prop_assert!(rep.mean_after < rep.mean_before);
        }
    }

    #[test]
    fn blocked_candidates_are_rejected(seed in 0u64..1000) {
        let field = small_world(seed);
        let mut store = FeatureStore::new(*field.grid(), FeatureParams::default());
        let blocked = field.grid().cells().find(|&c| field.activity(c) < 0.0);
        if let Some(c) = blocked {
            prop_assert_eq!(store.offer(Some(c), &field, false).unwrap(), PassOutcome::RejectedActivity);
            prop_assert!(store.features().is_empty());
        }
    }
}

#[test]
fn offering_every_free_cell_completes_representation() {
    let field = small_world(7);
    let mut store = FeatureStore::new(*field.grid(), FeatureParams::default());
    let free: Vec<Cell> = field.grid().cells().filter(|&c| field.activity(c) >= 0.0).collect();
    for _ in 0..3 {
        for &c in &free {
            store.offer(Some(c), &field, false).unwrap();
        }
    }
    assert!(store.is_complete());
    assert!(store.features().len() < free.len() / 4);
}

#[test]
fn close_candidate_is_rejected() {
    let field = small_world(1);
    let mut store = FeatureStore::new(*field.grid(), FeatureParams::default());
    let free: Vec<Cell> = field.grid().cells().filter(|&c| field.activity(c) >= 0.0).collect();
    let first = free[free.len() / 2];
    assert_eq!(store.offer(Some(first), &field, false).unwrap(), PassOutcome::Admitted);
    let near = free
        .iter()
        .copied()
        .find(|&c| c != first && field.grid().distance(c, first) <= 3.0)
        .unwrap();
    assert_eq!(store.offer(Some(near), &field, false).unwrap(), PassOutcome::RejectedDistance);
    assert_eq!(store.history().len(), 2);
}
