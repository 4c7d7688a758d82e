use pathfk::models::registry_entry;
use pathfk::solver::{evaluate_u, Engine, NestedConfig};
use pathfk::{Path, TimeGrid};

#[test]
fn regression_and_nested_agree_on_shared_coarse_grid() {
    let g = TimeGrid::new(1.0, 4).unwrap();
    let p = Path::constant(g, &[1.0], 0.0).unwrap();
    for name in ["heat", "asian", "linear-g", "nonlinear-f", "z-in-g"] {
        let m = registry_entry(name).unwrap().model;
        let reg = evaluate_u(&m, &p, &Engine::regression(10_000, 7)).unwrap();
        let nested = evaluate_u(&m, &p, &Engine::Nested(NestedConfig { steps: 4, branching: 8, outer_samples: 64, seed: 8, ..NestedConfig::default() })).unwrap();
        let gap = (reg.value[0] - nested.value[0]).abs();
        let tol = 3.0 * (reg.stderr[0] + nested.stderr[0]);
        eprintln!("{name}: reg {:?} nested {:?} gap {gap} tol {tol}", reg, nested);
        assert!(gap <= tol, "{name}: gap {gap} > {tol}");
    }
}
