use serde::{Deserialize, Serialize};

use super::{random_initial_paths, CheckReport, SampleDetail};
use crate::error::{Error, Result};
use crate::models::Model;
use crate::path_space::Path;
use crate::rng::{derive_seed, Uniforms};
use crate::simulation::{sample_drivers, simulate_forward};
use crate::solver::{solve_regression_on, BackwardSolution, RegressionConfig};
use crate::stats::Moments;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonConfig {
    pub n_scenarios: usize,
    pub seed: u64,
    #[serde(default = "default_initials")]
    pub n_initials: usize,
    /// Sampled points at which the ordering preconditions are verified.
    #[serde(default = "default_probes")]
    pub probes: usize,
    /// Scenario-wise slack for rounding in the scheme.
    #[serde(default = "default_tol")]
    pub scheme_tolerance: f64,
    #[serde(default)]
    pub regression: RegressionConfig,
}

fn default_initials() -> usize {
    20
}
fn default_probes() -> usize {
    200
}
fn default_tol() -> f64 {
    1e-9
}

impl ComparisonConfig {
    pub fn new(n_scenarios: usize, seed: u64) -> Self {
        ComparisonConfig {
            n_scenarios,
            seed,
            n_initials: default_initials(),
            probes: default_probes(),
            scheme_tolerance: default_tol(),
            regression: RegressionConfig::default(),
        }
    }
}

fn close(a: &[f64], b: &[f64]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= 1e-12 * (1.0 + x.abs().max(y.abs())))
}

/// Samples paths and states and returns a witness of the first violated
/// ordering precondition, if any.
fn precondition_witness(m1: &Model, m2: &Model, initial: &Path, cfg: &ComparisonConfig) -> Result<Option<String>> {
    if m1.dims.k != 1 || m2.dims.k != 1 {
        return Ok(Some(format!("comparison needs k = 1, got {} and {}", m1.dims.k, m2.dims.k)));
    }
    if m1.dims != m2.dims {
        return Ok(Some(format!("dimension mismatch: {:?} vs {:?}", m1.dims, m2.dims)));
    }
    let d = m1.dims.d;
    let grid = initial.grid();
    let n_paths = cfg.probes.div_ceil(10).max(1);
    let drivers = sample_drivers(grid, n_paths, d, m1.dims.l, derive_seed(cfg.seed, 0xC0))?;
    let ens = simulate_forward(m1, initial, &drivers)?;
    let mut rng = Uniforms::new(derive_seed(cfg.seed, 0xC1));
    let start = ens.start_index();
    let random_state = |rng: &mut Uniforms| -> f64 {
        let mag = rng.range((1e-3f64).ln(), (10.0f64).ln()).exp();
        if rng.next() < 0.5 { -mag } else { mag }
    };
    for j in 0..cfg.probes {
        let full = &ens.paths[j % ens.len()];
        let phi1 = m1.terminal(full)[0];
        let phi2 = m2.terminal(full)[0];
        if phi1 < phi2 {
            return Ok(Some(format!("terminal: Phi1 = {phi1} < Phi2 = {phi2} on sampled path {j}")));
        }
        let i = start + rng.index(grid.steps() - start + 1);
        let q = full.restrict_to_index(i);
        let y = [random_state(&mut rng)];
        let z: Vec<f64> = (0..d).map(|_| random_state(&mut rng)).collect();
        let f1 = m1.driver(&q, &y, &z)[0];
        let f2 = m2.driver(&q, &y, &z)[0];
        if f1 < f2 {
            return Ok(Some(format!("driver: f1 = {f1} < f2 = {f2} at t = {}, y = {}, z = {z:?}", q.current_time(), y[0])));
        }
        if !close(&m1.noise(&q, &y, &z), &m2.noise(&q, &y, &z)) {
            return Ok(Some(format!("noise coefficients differ at t = {}", q.current_time())));
        }
        if !close(&m1.drift(&q), &m2.drift(&q)) || !close(&m1.diffusion(&q), &m2.diffusion(&q)) {
            return Ok(Some(format!("forward coefficients differ at t = {}", q.current_time())));
        }
    }
    Ok(None)
}

fn solve_pair(m1: &Model, m2: &Model, p: &Path, n: usize, seed: u64, cfg: &RegressionConfig) -> Result<(BackwardSolution, BackwardSolution)> {
    let drivers = sample_drivers(p.grid(), n, m1.dims.d, m1.dims.l, seed)?;
    let ens = simulate_forward(m1, p, &drivers)?;
    Ok((solve_regression_on(m1, &ens, &drivers, cfg)?, solve_regression_on(m2, &ens, &drivers, cfg)?))
}

/// `Y_1 >= Y_2` scenario-wise under common random numbers from `initial`, and
/// `u_1 >= u_2 - 3 stderr` over random initial paths. The statistic is the
/// largest violation (scenario-wise excess, or expectation-level shortfall
/// beyond three paired standard errors); passes when it is at most the scheme
/// tolerance. A sampled precondition violation aborts with an error.
pub fn comparison_check(m1: &Model, m2: &Model, initial: &Path, cfg: &ComparisonConfig) -> Result<CheckReport> {
    if let Some(w) = precondition_witness(m1, m2, initial, cfg)? {
        return Err(Error::Precondition(format!("comparison preconditions violated: {w}")));
    }
    let (s1, s2) = solve_pair(m1, m2, initial, cfg.n_scenarios, cfg.seed, &cfg.regression)?;
    let mut worst_scenario = f64::NEG_INFINITY;
    let mut min_gap = f64::INFINITY;
    let mut details = Vec::new();
    for s in 0..s1.n_scenarios() {
        let mut worst = f64::NEG_INFINITY;
        for i in s1.start_level..s1.times.len() {
            let v = s2.y_at(s, i)[0] - s1.y_at(s, i)[0];
            worst = worst.max(v);
            min_gap = min_gap.min(-v);
        }
        worst_scenario = worst_scenario.max(worst);
        if s < 100 {
            details.push(SampleDetail::new(format!("scenario{}", s1.scenario_ids[s]), worst, 0.0, cfg.scheme_tolerance));
        }
    }
    let paths = random_initial_paths(initial.grid(), m1.dims.d, cfg.n_initials, 0.5, 2.0, derive_seed(cfg.seed, 0xC2))?;
    let mut worst_expectation = f64::NEG_INFINITY;
    let mut mean_gap = 0.0;
    for (j, p) in paths.iter().enumerate() {
        let (a, b) = solve_pair(m1, m2, p, cfg.n_scenarios, derive_seed(cfg.seed, j as u64 + 1), &cfg.regression)?;
        let gap = a.u_estimate[0] - b.u_estimate[0];
        let paired: Moments = (0..a.n_scenarios()).map(|s| a.u_samples[s] - b.u_samples[s]).collect();
        let se = paired.stderr();
        let shortfall = -gap - 3.0 * se;
        worst_expectation = worst_expectation.max(shortfall);
        mean_gap += gap / paths.len() as f64;
        details.push(SampleDetail::new(format!("initial{j}"), shortfall, gap, cfg.scheme_tolerance));
    }
    let stat = worst_scenario.max(worst_expectation);
    Ok(CheckReport::new("comparison", stat, cfg.scheme_tolerance, s1.n_scenarios() + paths.len(), details)
        .with_extra("worst_scenario_excess", worst_scenario)
        .with_extra("worst_expectation_shortfall", worst_expectation)
        .with_extra("min_scenario_gap", min_gap)
        .with_extra("mean_u_gap", mean_gap)
        .with_extra("u_gap_at_initial", s1.u_estimate[0] - s2.u_estimate[0]))
}
