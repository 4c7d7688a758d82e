use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{CheckReport, SampleDetail};
use crate::error::{Error, Result};
use crate::models::Model;
use crate::path_space::Path;
use crate::rng::derive_seed;
use crate::simulation::{sample_drivers, simulate_forward};
use crate::solver::{evaluate_u, solve_regression_on, Engine, RegressionConfig, RegressionEngine};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowConfig {
    pub n_scenarios: usize,
    pub seed: u64,
    #[serde(default = "default_subsample")]
    pub subsample: usize,
    #[serde(default)]
    pub regression: RegressionConfig,
}

fn default_subsample() -> usize {
    20
}

impl FlowConfig {
    pub fn new(n_scenarios: usize, seed: u64) -> Self {
        FlowConfig { n_scenarios, seed, subsample: default_subsample(), regression: RegressionConfig::default() }
    }
}

/// `u(X_{t̄}) = Y(t̄)` at the midpoint `t̄` of `[t, T]`: the scenario-wise
/// regression value of `Y(t̄)` against a fresh solve from the realised prefix.
/// Each sample scores `|diff| / (3 (se_Y + se_u))`; passes when all are at most 1.
pub fn flow_check(model: &Model, initial: &Path, cfg: &FlowConfig) -> Result<CheckReport> {
    if !model.noise_free {
        return Err(Error::Precondition(
            "the flow check re-solves with averaged backward noise and needs g = 0".into(),
        ));
    }
    let grid = initial.grid();
    let drivers = sample_drivers(grid, cfg.n_scenarios, model.dims.d, model.dims.l, cfg.seed)?;
    let ensemble = simulate_forward(model, initial, &drivers)?;
    let sol = solve_regression_on(model, &ensemble, &drivers, &cfg.regression)?;
    let start = ensemble.start_index();
    let mid = (start + grid.steps()) / 2;
    let m = cfg.subsample.min(ensemble.len());
    let rows: Vec<(SampleDetail, f64, f64)> = (0..m)
        .into_par_iter()
        .map(|s| -> Result<(SampleDetail, f64, f64)> {
            let prefix = ensemble.paths[s].restrict_to_index(mid);
            let engine = Engine::Regression(RegressionEngine {
                n_scenarios: cfg.n_scenarios,
                seed: derive_seed(cfg.seed, s as u64 + 1),
                config: cfg.regression.clone(),
            });
            let u = evaluate_u(model, &prefix, &engine)?;
            let y = sol.y_at(s, mid)[0];
            let se = sol.y_stderr_at(s, mid)[0] + u.stderr[0];
            let diff = (y - u.value[0]).abs();
            let score = if se > 0.0 { diff / (3.0 * se) } else if diff == 0.0 { 0.0 } else { f64::INFINITY };
            Ok((SampleDetail::new(format!("s{}", ensemble.scenario_ids[s]), diff, u.value[0], 3.0 * se), score, diff))
        })
        .collect::<Result<_>>()?;
    let score = rows.iter().map(|r| r.1).fold(0.0, f64::max);
    let max_diff = rows.iter().map(|r| r.2).fold(0.0, f64::max);
    let details = rows.into_iter().map(|r| r.0).collect();
    Ok(CheckReport::new("flow", score, 1.0, m, details)
        .with_extra("midpoint", grid.time(mid))
        .with_extra("max_abs_difference", max_diff))
}
