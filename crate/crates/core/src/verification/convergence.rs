use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{CheckReport, SampleDetail};
use crate::error::{Error, Result};
use crate::functional::{backward_ito_residual, functional_ito_residual, AnalyticFunctional, DoublyStochasticProcess, SmoothMap};
use crate::models::Model;
use crate::path_space::{Path, TimeGrid};
use crate::rng::derive_seed;
use crate::simulation::{sample_drivers, simulate_forward};
use crate::solver::{solve_regression_on, RegressionConfig};
use crate::stats::{linear_fit, rms_stderr, Moments};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscretizationConfig {
    pub n_scenarios: usize,
    pub seed: u64,
    /// Node counts, increasing; each must divide the steps remaining after `t`.
    pub n_sequence: Vec<usize>,
    /// Bound on the error of the finest level.
    pub tolerance: f64,
    #[serde(default)]
    pub regression: RegressionConfig,
}

impl DiscretizationConfig {
    pub fn new(n_scenarios: usize, seed: u64, n_sequence: Vec<usize>, tolerance: f64) -> Self {
        DiscretizationConfig { n_scenarios, seed, n_sequence, tolerance, regression: RegressionConfig::default() }
    }
}

/// `|u^n - u|` for the node-frozen models along `n_sequence`, all solved on the
/// same scenarios. Fails if an error rises by more than two paired standard
/// errors over its predecessor, or if the last error exceeds the tolerance.
pub fn discretization_convergence_check(model: &Model, initial: &Path, cfg: &DiscretizationConfig) -> Result<CheckReport> {
    if cfg.n_sequence.is_empty() {
        return Err(Error::Precondition("discretization check needs a non-empty n sequence".into()));
    }
    if cfg.n_sequence.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Precondition(format!("n sequence must be increasing, got {:?}", cfg.n_sequence)));
    }
    let grid = initial.grid();
    let drivers = sample_drivers(grid, cfg.n_scenarios, model.dims.d, model.dims.l, cfg.seed)?;
    let ens = simulate_forward(model, initial, &drivers)?;
    let base = solve_regression_on(model, &ens, &drivers, &cfg.regression)?;
    let t = initial.current_time();
    let mut errors = Vec::with_capacity(cfg.n_sequence.len());
    let mut details = Vec::new();
    for &n in &cfg.n_sequence {
        let discrete = model.discretized(grid, n, t)?;
        // The forward path of the frozen model differs when b or σ see the
        // past, so it is re-simulated on the same drivers.
        let ens_n = simulate_forward(&discrete, initial, &drivers)?;
        let sol = solve_regression_on(&discrete, &ens_n, &drivers, &cfg.regression)?;
        let diff: Moments = (0..sol.n_scenarios()).map(|s| sol.u_samples[s] - base.u_samples[s]).collect();
        let err = (sol.u_estimate[0] - base.u_estimate[0]).abs();
        log::debug!("discretization n = {n}: error {err:.3e} (stderr {:.3e})", diff.stderr());
        errors.push((n, err, diff.stderr()));
    }
    let mut stat = f64::NEG_INFINITY;
    for w in errors.windows(2) {
        let ((_, e0, s0), (n1, e1, s1)) = (w[0], w[1]);
        let rise = e1 - e0 - 2.0 * (s0 * s0 + s1 * s1).sqrt();
        stat = stat.max(rise);
        details.push(SampleDetail::new(format!("n={n1} rise"), rise, e1, 0.0));
    }
    let (n_last, e_last, _) = *errors.last().expect("non-empty");
    stat = stat.max(e_last - cfg.tolerance);
    details.push(SampleDetail::new(format!("n={n_last} final"), e_last - cfg.tolerance, e_last, 0.0));
    let mut report = CheckReport::new("discretization_convergence", stat, 0.0, cfg.n_scenarios, details)
        .with_extra("u", base.u_estimate[0])
        .with_extra("u_stderr", base.u_stderr[0]);
    for (n, e, s) in &errors {
        report = report.with_extra(&format!("error_n{n}"), *e).with_extra(&format!("stderr_n{n}"), *s);
    }
    Ok(report)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ItoResidualKind {
    /// `F(γ_t) = γ(t)²` along a Brownian path with quadratic variation `Δt`.
    Functional,
    /// `Φ(α) = α²` for `α = W + ∫ dB̄`, which exercises both stochastic integrals.
    Backward,
}

fn square_functional() -> AnalyticFunctional {
    AnalyticFunctional {
        dim: 1,
        value: Box::new(|p| vec![p.endpoint()[0].powi(2)]),
        d_x: Box::new(|p| vec![2.0 * p.endpoint()[0]]),
        d_xx: Box::new(|_| vec![2.0]),
        d_t: Box::new(|_| vec![0.0]),
    }
}

fn residuals_at(kind: ItoResidualKind, steps: usize, n_paths: usize, seed: u64) -> Result<Vec<f64>> {
    let grid = TimeGrid::new(1.0, steps)?;
    let drivers = sample_drivers(grid, n_paths, 1, 1, seed)?;
    let f = square_functional();
    let sq = |a: &[f64]| a[0] * a[0];
    let grad = |a: &[f64]| vec![2.0 * a[0]];
    let hess = |_: &[f64]| vec![2.0];
    (0..n_paths)
        .into_par_iter()
        .map(|s| match kind {
            ItoResidualKind::Functional => {
                let mut values = vec![0.0; steps + 1];
                for (i, w) in drivers.dw_path(s).iter().enumerate() {
                    values[i + 1] = values[i] + w;
                }
                let path = Path::scalar(grid, &values)?;
                functional_ito_residual(&f, &path, &vec![grid.dt(); steps])
            }
            ItoResidualKind::Backward => {
                let proc_ = DoublyStochasticProcess {
                    k: 1,
                    d: 1,
                    l: 1,
                    dt: grid.dt(),
                    alpha0: vec![0.0],
                    beta: vec![0.0; steps],
                    gamma: vec![1.0; steps],
                    delta: vec![1.0; steps],
                    dw: drivers.dw_path(s).to_vec(),
                    db: drivers.db_path(s).to_vec(),
                };
                backward_ito_residual(&SmoothMap { value: &sq, gradient: &grad, hessian: &hess }, &proc_)
            }
        })
        .collect()
}

/// RMS of the discrete Itô residual for each step count. A violation is a rise
/// beyond two combined standard errors between consecutive counts; a fitted
/// log-log decay rate outside `[0.4, 1.1]` is one more.
pub fn ito_residual_convergence(kind: ItoResidualKind, steps: &[usize], n_paths: usize, seed: u64) -> Result<CheckReport> {
    if steps.len() < 2 {
        return Err(Error::Precondition("convergence needs at least two step counts".into()));
    }
    let mut rows = Vec::with_capacity(steps.len());
    for (j, &n) in steps.iter().enumerate() {
        let r = residuals_at(kind, n, n_paths, derive_seed(seed, j as u64))?;
        rows.push(rms_stderr(&r));
    }
    let mut violations = 0usize;
    let mut details = Vec::new();
    for (j, w) in rows.windows(2).enumerate() {
        let ((r0, s0), (r1, s1)) = (w[0], w[1]);
        let allowed = 2.0 * (s0 * s0 + s1 * s1).sqrt();
        if r1 - r0 > allowed {
            violations += 1;
        }
        details.push(SampleDetail::new(format!("N={}", steps[j + 1]), r1 - r0, r0, allowed));
    }
    let logn: Vec<f64> = steps.iter().map(|&n| (n as f64).ln()).collect();
    let logr: Vec<f64> = rows.iter().map(|r| r.0.max(f64::MIN_POSITIVE).ln()).collect();
    let rate = -linear_fit(&logn, &logr).0;
    if !(0.4..=1.1).contains(&rate) {
        violations += 1;
        details.push(SampleDetail::new("rate", rate, 0.75, 0.35));
    }
    let name = match kind {
        ItoResidualKind::Functional => "functional_ito_residual",
        ItoResidualKind::Backward => "backward_ito_residual",
    };
    let mut report = CheckReport::new(name, violations as f64, 0.0, n_paths * steps.len(), details).with_extra("rate", rate);
    for (n, (r, s)) in steps.iter().zip(&rows) {
        report = report.with_extra(&format!("rms_N{n}"), *r).with_extra(&format!("stderr_N{n}"), *s);
    }
    Ok(report)
}
