use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{fit_envelope, CheckReport, SampleDetail, SolverFunctional};
use crate::error::Result;
use crate::functional::vertical_derivative;
use crate::models::Model;
use crate::path_space::{euclidean, Path};
use crate::simulation::{sample_drivers, simulate_forward, ScenarioEnsemble};
use crate::solver::{solve_regression_on, BackwardSolution, RegressionConfig};
use crate::stats::rms;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ZCheckConfig {
    pub n_scenarios: usize,
    pub seed: u64,
    #[serde(default = "default_subsample")]
    pub subsample: usize,
    #[serde(default = "default_branching")]
    pub branching: usize,
    #[serde(default = "default_max_steps")]
    pub max_steps: usize,
    pub tolerance: f64,
    /// Relative vertical bump for `D_x u`.
    #[serde(default = "default_bump")]
    pub rel_bump: f64,
    /// Samples whose derivative estimate changes by more than this (relative)
    /// between `h` and `h/2` are excluded as possibly non-differentiable.
    #[serde(default = "default_flag")]
    pub flag_tolerance: f64,
    #[serde(default)]
    pub regression: RegressionConfig,
}

fn default_subsample() -> usize {
    100
}
fn default_branching() -> usize {
    8
}
fn default_max_steps() -> usize {
    4
}
fn default_bump() -> f64 {
    1e-4
}
fn default_flag() -> f64 {
    1e-2
}

impl ZCheckConfig {
    pub fn new(n_scenarios: usize, seed: u64, tolerance: f64) -> Self {
        ZCheckConfig {
            n_scenarios,
            seed,
            subsample: default_subsample(),
            branching: default_branching(),
            max_steps: default_max_steps(),
            tolerance,
            rel_bump: default_bump(),
            flag_tolerance: default_flag(),
            regression: RegressionConfig::default(),
        }
    }
}

/// Regression `Z_i` against `D_x u(X_{t_i}) σ(X_{t_i})`, where `u` is the nested
/// engine conditioned on the scenario's own `B` path; statistic = RMS of
/// `|Z - Z_ref| / (1 + |Z_ref|)` over a scenario subsample and all steps.
pub fn z_representation_check(model: &Model, initial: &Path, cfg: &ZCheckConfig) -> Result<CheckReport> {
    let (d, k) = (model.dims.d, model.dims.k);
    let drivers = sample_drivers(initial.grid(), cfg.n_scenarios, d, model.dims.l, cfg.seed)?;
    let ensemble = simulate_forward(model, initial, &drivers)?;
    let sol = solve_regression_on(model, &ensemble, &drivers, &cfg.regression)?;
    let start = ensemble.start_index();
    let big_n = initial.grid().steps();
    let m = cfg.subsample.min(ensemble.len());
    let jobs: Vec<(usize, usize)> = (0..m).flat_map(|s| (start..big_n).map(move |i| (s, i))).collect();
    let rows: Vec<Option<(String, f64, f64)>> = jobs
        .par_iter()
        .map(|&(s, i)| -> Result<Option<(String, f64, f64)>> {
            let q = ensemble.paths[s].restrict_to_index(i);
            let mut u = SolverFunctional::nested(model, cfg.branching, cfg.max_steps);
            if !model.noise_free {
                u = u.with_frozen_b(drivers.db_path(ensemble.scenario_ids[s]).to_vec());
            }
            let h = cfg.rel_bump * (1.0 + euclidean(q.endpoint()));
            let dx = vertical_derivative(&u, &q, h)?;
            let scale = 1.0 + dx.value.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            if dx.flagged(cfg.flag_tolerance * scale) {
                return Ok(None);
            }
            let sigma = model.diffusion(&q);
            let mut z_ref = vec![0.0; k * d];
            for r in 0..k {
                for c in 0..d {
                    z_ref[r * d + c] = (0..d).map(|j| dx.value[r * d + j] * sigma[j * d + c]).sum();
                }
            }
            let z = sol.z_at(s, i);
            let err: Vec<f64> = z.iter().zip(&z_ref).map(|(a, b)| a - b).collect();
            let rel = euclidean(&err) / (1.0 + euclidean(&z_ref));
            Ok(Some((format!("s{}_i{i}", ensemble.scenario_ids[s]), rel, euclidean(&z_ref))))
        })
        .collect::<Result<_>>()?;
    let total = rows.len();
    let kept: Vec<(String, f64, f64)> = rows.into_iter().flatten().collect();
    let excluded = total - kept.len();
    let rels: Vec<f64> = kept.iter().map(|r| r.1).collect();
    let stat = if kept.is_empty() { f64::INFINITY } else { rms(&rels) };
    let details = kept.into_iter().map(|(l, rel, z)| SampleDetail::new(l, rel, z, cfg.tolerance)).collect();
    Ok(CheckReport::new("z_representation", stat, cfg.tolerance, total - excluded, details)
        .with_extra("excluded", excluded as f64)
        .with_extra("exclusion_rate", excluded as f64 / total.max(1) as f64))
}

/// Envelope `|Z(t_i)| <= C (1 + ‖X_{t_i}‖^q)` fitted over every scenario and
/// step of `solution` (default `q = 2m + 1`).
pub fn z_growth_check(model: &Model, ensemble: &ScenarioEnsemble, solution: &BackwardSolution, q: Option<f64>) -> Result<CheckReport> {
    let q = q.unwrap_or(2.0 * model.growth_m + 1.0);
    let start = ensemble.start_index();
    let big_n = ensemble.initial.grid().steps();
    let mut labels = Vec::new();
    let mut stat = Vec::new();
    let mut shape = Vec::new();
    let mut magnitude = Vec::new();
    for (s, x) in ensemble.paths.iter().enumerate() {
        let mut running = x.restrict_to_index(start).sup_norm();
        for i in start..big_n {
            running = running.max(euclidean(x.value(i)));
            labels.push(format!("s{}_i{i}", ensemble.scenario_ids[s]));
            stat.push(euclidean(solution.z_at(s, i)));
            shape.push(1.0 + running.powf(q));
            magnitude.push(running);
        }
    }
    let zero = vec![0.0; stat.len()];
    let env = fit_envelope(&labels, &stat, &zero, &shape, &magnitude);
    Ok(CheckReport::new("z_growth", env.violations as f64, 0.0, stat.len(), env.details)
        .with_extra("q", q)
        .with_extra("fitted_c", env.constant)
        .with_extra("minimal_c", env.max_ratio))
}
