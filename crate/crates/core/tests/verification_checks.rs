use pathfk::models::registry_entry;
use pathfk::path_space::{Path, TimeGrid};
use pathfk::simulation::{sample_drivers, simulate_forward};
use pathfk::solver::{solve_regression_on, Engine, FeatureSpec, RegressionBasis, RegressionConfig, StateFeature};
use pathfk::verification::*;

fn start(n: usize, x: f64) -> Path {
    Path::constant(TimeGrid::new(1.0, n).unwrap(), &[x], 0.0).unwrap()
}

fn show(r: &CheckReport) {
    eprintln!("{}: stat {:.4e} thr {:.4e} passed {} extras {:?}", r.name, r.statistic, r.threshold, r.passed, r.extras);
}

#[test]
fn z_representation_heat_and_asian() {
    for name in ["heat", "asian"] {
        let e = registry_entry(name).unwrap();
        let r = z_representation_check(&e.model, &start(16, 0.5), &ZCheckConfig::new(10_000, 11, 0.05)).unwrap();
        show(&r);
        assert!(r.passed, "{name}");
    }
}

#[test]
fn z_growth_envelopes() {
    for (name, q) in [("heat", Some(1.0)), ("asian", Some(0.0)), ("heat", None)] {
        let e = registry_entry(name).unwrap();
        let p = start(16, 0.5);
        let drivers = sample_drivers(p.grid(), 4000, 1, 1, 3).unwrap();
        let ens = simulate_forward(&e.model, &p, &drivers).unwrap();
        let sol = solve_regression_on(&e.model, &ens, &drivers, &RegressionConfig::default()).unwrap();
        let r = z_growth_check(&e.model, &ens, &sol, q).unwrap();
        show(&r);
        assert!(r.passed, "{name}");
    }
}

#[test]
fn flow_noise_free_models() {
    for name in ["heat", "asian", "path-f"] {
        let e = registry_entry(name).unwrap();
        let mut cfg = FlowConfig::new(10_000, 5);
        if name == "path-f" {
            // Y depends on the path through x and its running max only
            let features = vec![StateFeature::Endpoint(0), StateFeature::SqrtDrawdown(0)];
            let basis = RegressionBasis { spec: FeatureSpec::Custom(features), degree: 4, future_b: None };
            cfg.regression = RegressionConfig { basis: Some(basis), ..RegressionConfig::default() };
        }
        let r = flow_check(&e.model, &start(16, 0.3), &cfg).unwrap();
        show(&r);
        assert!(r.passed, "{name}");
    }
}

#[test]
fn forward_feynman_kac_closed_forms() {
    for name in ["heat", "asian"] {
        let e = registry_entry(name).unwrap();
        let g = TimeGrid::new(1.0, 16).unwrap();
        let initials = random_initial_paths(g, 1, 20, 0.5, 2.0, 9).unwrap();
        let u = e.closed_form_u.unwrap();
        let r = feynman_kac_forward_check(&e.model, u.as_ref(), &initials, &Engine::regression(10_000, 12), 0.02).unwrap();
        show(&r);
        assert!(r.passed, "{name}");
    }
}

#[test]
fn spde_residual_shrinks_with_refinement() {
    for name in ["heat", "asian"] {
        let e = registry_entry(name).unwrap();
        let u = e.closed_form_u.unwrap();
        let mut prev = f64::INFINITY;
        for n in [8, 16, 32] {
            let p = start(n, 0.5);
            let drivers = sample_drivers(p.grid(), 2000, 1, 1, 21).unwrap();
            let r = spde_residual(&e.model, u.as_ref(), &p, &drivers, 1.0).unwrap();
            show(&r);
            assert!(r.statistic < prev, "{name} N={n}");
            prev = r.statistic;
        }
    }
}

#[test]
fn reverse_feynman_kac_nonlinear_driver() {
    let cfg = ReverseConfig { n_paths: 20, seed: 2, branching: 8, max_steps: 4, tolerance: 0.1, rel_bump: 1e-3 };
    let e = registry_entry("nonlinear-f").unwrap();
    let coarse = feynman_kac_reverse_check(&e.model, &start(4, 0.2), &cfg).unwrap();
    show(&coarse);
    assert!(coarse.passed);
    let fine_cfg = ReverseConfig { n_paths: 10, branching: 4, max_steps: 8, ..cfg.clone() };
    let fine = feynman_kac_reverse_check(&e.model, &start(8, 0.2), &fine_cfg).unwrap();
    show(&fine);
    assert!(fine.statistic < coarse.statistic);
    // quadratic terminal, exact quadrature: only rounding remains
    let heat = registry_entry("heat").unwrap();
    let r = feynman_kac_reverse_check(&heat.model, &start(4, 0.2), &ReverseConfig { tolerance: 1e-6, ..cfg }).unwrap();
    show(&r);
    assert!(r.passed);
}

#[test]
fn comparison_constructions() {
    let heat = registry_entry("heat").unwrap().model;
    let shifted = heat.to_builder().shift_terminal(1.0).build().unwrap();
    let p = start(16, 0.4);
    let r = comparison_check(&shifted, &heat, &p, &ComparisonConfig::new(2000, 1)).unwrap();
    show(&r);
    assert!(r.passed);
    assert!((r.extras["u_gap_at_initial"] - 1.0).abs() < 1e-9);
    let asian = registry_entry("asian").unwrap().model;
    let sourced = asian.to_builder().shift_driver(0.5).build().unwrap();
    let r = comparison_check(&sourced, &asian, &p, &ComparisonConfig::new(2000, 1)).unwrap();
    show(&r);
    assert!(r.passed);
    assert!((r.extras["u_gap_at_initial"] - 0.5).abs() < 1e-6);
    let err = comparison_check(&heat, &shifted, &p, &ComparisonConfig::new(2000, 1)).unwrap_err();
    assert!(err.to_string().contains("Phi1"), "{err}");
}

#[test]
fn discretization_path_driver_and_markovian() {
    let p = start(16, 0.2);
    let e = registry_entry("path-f").unwrap();
    let r = discretization_convergence_check(&e.model, &p, &DiscretizationConfig::new(10_000, 3, vec![2, 4, 8, 16], 1e-6)).unwrap();
    show(&r);
    assert!(r.passed);
    let e = registry_entry("heat").unwrap();
    let r = discretization_convergence_check(&e.model, &p, &DiscretizationConfig::new(10_000, 3, vec![2, 4, 8, 16], 1e-9)).unwrap();
    show(&r);
    assert!(r.passed);
}

#[test]
fn ito_residuals_converge() {
    for kind in [ItoResidualKind::Functional, ItoResidualKind::Backward] {
        let r = ito_residual_convergence(kind, &[64, 128, 256], 4000, 8).unwrap();
        show(&r);
        assert!(r.passed);
        assert!((r.extras["rate"] - 0.5).abs() < 0.1);
    }
}

#[test]
fn envelopes_registry_models() {
    let g = TimeGrid::new(1.0, 16).unwrap();
    for name in ["heat", "asian", "path-f"] {
        let e = registry_entry(name).unwrap();
        let r = moment_envelope_check(&e.model, g, &EnvelopeConfig::new(6)).unwrap();
        show(&r);
        assert!(r.passed, "{name}");
        let r = regularity_check(&e.model, g, &RegularityConfig::new(6)).unwrap();
        show(&r);
        assert!(r.passed, "{name}");
    }
}
