use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::basis::{FeatureMap, RegressionBasis, SCENARIOS_PER_FEATURE};
use super::lsq::LeastSquares;
use super::{BackwardSolution, EngineTag, PicardMonitor, SchemeParams};
use crate::error::{check_dim, Error, Result};
use crate::models::Model;
use crate::path_space::Path;
use crate::simulation::{simulate_forward, BrownianPair, ScenarioEnsemble};
use crate::stats::Moments;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegressionConfig {
    /// `None` picks the default basis for the model.
    #[serde(default)]
    pub basis: Option<RegressionBasis>,
    #[serde(default = "default_picard")]
    pub picard_iters: usize,
}

fn default_picard() -> usize {
    2
}

impl Default for RegressionConfig {
    fn default() -> Self {
        RegressionConfig { basis: None, picard_iters: default_picard() }
    }
}

/// Simulates the forward paths from `initial` with `drivers` and solves.
pub fn solve_regression(
    model: &Model,
    initial: &Path,
    drivers: &BrownianPair,
    config: &RegressionConfig,
) -> Result<BackwardSolution> {
    let ensemble = simulate_forward(model, initial, drivers)?;
    solve_regression_on(model, &ensemble, drivers, config)
}

fn finite(v: &[f64], what: &str, step: usize) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::Evaluation(format!("non-finite {what} at step {step}")))
    }
}

/// Least-squares backward induction on an already simulated ensemble.
pub fn solve_regression_on(
    model: &Model,
    ensemble: &ScenarioEnsemble,
    drivers: &BrownianPair,
    config: &RegressionConfig,
) -> Result<BackwardSolution> {
    let (d, k, l) = (model.dims.d, model.dims.k, model.dims.l);
    let grid = ensemble.initial.grid();
    let big_n = grid.steps();
    let dt = grid.dt();
    let idx = ensemble.start_index();
    let n = ensemble.len();
    let basis = config.basis.clone().unwrap_or_else(|| RegressionBasis::default_for(model));
    let fmap = FeatureMap::new(&basis, model)?;
    let p = fmap.len();
    if p * SCENARIOS_PER_FEATURE > n {
        return Err(Error::Precondition(format!(
            "{p} regression features need at least {} scenarios, got {n}",
            p * SCENARIOS_PER_FEATURE
        )));
    }
    let ids = &ensemble.scenario_ids;
    let v = fmap.state_len();
    let tracks: Vec<Vec<f64>> = ensemble.paths.par_iter().map(|q| fmap.state_track(q)).collect();

    let lv = big_n + 1;
    let kd = k * d;
    let mut y = vec![0.0; n * lv * k];
    let mut y_se = vec![0.0; n * lv * k];
    let mut z = vec![0.0; n * big_n * kd];

    // terminal condition, exact per scenario
    let terminal: Vec<Vec<f64>> = ensemble.paths.par_iter().map(|q| model.terminal(q)).collect();
    for (s, t) in terminal.iter().enumerate() {
        check_dim(k, t.len(), "terminal output")?;
        y[(s * lv + big_n) * k..(s * lv + big_n + 1) * k].copy_from_slice(t);
    }
    finite(&y, "terminal value", big_n)?;
    let mut pv: Vec<f64> = terminal.concat();
    let mut y_next: Vec<f64> = pv.clone();
    let mut z_next = vec![0.0; n * kd];
    let mut fut = vec![0.0; n * l];
    let mut ridge_steps = Vec::new();
    let mut design = vec![0.0; n * p];

    for i in (idx..big_n).rev() {
        for (s, f) in fut.chunks_exact_mut(l).enumerate() {
            for (a, b) in f.iter_mut().zip(drivers.db(ids[s], i)) {
                *a += b;
            }
        }
        design.par_chunks_mut(p).enumerate().for_each(|(s, row)| {
            fmap.write_row(&tracks[s][i * v..(i + 1) * v], &fut[s * l..(s + 1) * l], row);
        });
        finite(&design, "regression feature", i)?;
        let ls = LeastSquares::fit(&design, n, p);
        if ls.ridge {
            ridge_steps.push(i);
        }
        let z_target = |c: &[f64], c_hat: &[f64]| -> Vec<f64> {
            let mut out = vec![0.0; n * kd];
            out.par_chunks_mut(kd).enumerate().for_each(|(s, o)| {
                let dw = drivers.dw(ids[s], i);
                for r in 0..k {
                    let e = c[s * k + r] - c_hat[s * k + r];
                    for j in 0..d {
                        o[r * d + j] = e * dw[j] / dt;
                    }
                }
            });
            out
        };
        if i + 1 == big_n {
            // Z_N from the same projection formula applied to Y_N
            let (yn_hat, _) = ls.project(&y_next, k);
            z_next = ls.project(&z_target(&y_next, &yn_hat), kd).0;
        }

        let targets: Vec<(Vec<f64>, Vec<f64>)> = (0..n)
            .into_par_iter()
            .map(|s| {
                let q = ensemble.paths[s].restrict_to_index(i + 1);
                let y1 = &y_next[s * k..(s + 1) * k];
                let z1 = &z_next[s * kd..(s + 1) * kd];
                let g = model.noise(&q, y1, z1);
                let f = model.driver(&q, y1, z1);
                let db = drivers.db(ids[s], i);
                let c: Vec<f64> =
                    (0..k).map(|r| y1[r] + (0..l).map(|j| g[r * l + j] * db[j]).sum::<f64>()).collect();
                (c, f)
            })
            .collect();
        let mut c = Vec::with_capacity(n * k);
        for (ci, fi) in &targets {
            check_dim(k, fi.len(), "driver output")?;
            c.extend_from_slice(ci);
        }
        finite(&c, "regression target", i)?;
        let (c_hat, _) = ls.project(&c, k);
        let z_hat = ls.project(&z_target(&c, &c_hat), kd).0;
        // martingale control variate: E_i[Z_i ΔW_i] = 0
        for s in 0..n {
            let dw = drivers.dw(ids[s], i);
            for r in 0..k {
                c[s * k + r] -= (0..d).map(|j| z_hat[s * kd + r * d + j] * dw[j]).sum::<f64>();
            }
        }
        let a: Vec<f64> = c.iter().zip(targets.iter().flat_map(|t| &t.1)).map(|(c, f)| c + f * dt).collect();
        let (c_hat, _) = ls.project(&c, k);
        let (mut y_hat, var) = ls.project(&a, k);

        let mut monitor = PicardMonitor::new();
        let c_hat_ref = &c_hat;
        for _ in 0..config.picard_iters {
            let updated: Vec<f64> = (0..n)
                .into_par_iter()
                .flat_map_iter(|s| {
                    let q = ensemble.paths[s].restrict_to_index(i);
                    let f = model.driver(&q, &y_hat[s * k..(s + 1) * k], &z_hat[s * kd..(s + 1) * kd]);
                    (0..k).map(move |r| c_hat_ref[s * k + r] + f[r] * dt).collect::<Vec<_>>()
                })
                .collect();
            let norm = (updated.iter().zip(&y_hat).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / n as f64).sqrt();
            y_hat = updated;
            monitor.update(norm, i, model.alpha)?;
        }

        for s in 0..n {
            for r in 0..k {
                let o = s * k + r;
                pv[o] += (c[o] - y_next[o]) + (y_hat[o] - c_hat[o]);
                y[(s * lv + i) * k + r] = y_hat[o];
            }
            z[(s * big_n + i) * kd..(s * big_n + i + 1) * kd].copy_from_slice(&z_hat[s * kd..(s + 1) * kd]);
        }
        // Per-point standard error from the residuals accumulated over steps
        // i..N (pseudo-value minus fit), so errors propagated from later
        // regressions are counted, not only this step's.
        let lev = ls.leverages();
        let dof = n.saturating_sub(p).max(1) as f64;
        let acc: Vec<f64> = (0..k)
            .map(|r| ((0..n).map(|s| (pv[s * k + r] - y_hat[s * k + r]).powi(2)).sum::<f64>() / dof).max(var[r]))
            .collect();
        for s in 0..n {
            for r in 0..k {
                y_se[(s * lv + i) * k + r] = (acc[r] * lev[s]).max(0.0).sqrt();
            }
        }
        y_next = y_hat;
        z_next = z_hat;
    }

    // before t the solution is frozen at its value at t
    for s in 0..n {
        for i in 0..idx {
            for r in 0..k {
                y[(s * lv + i) * k + r] = y[(s * lv + idx) * k + r];
                y_se[(s * lv + i) * k + r] = y_se[(s * lv + idx) * k + r];
            }
        }
    }
    let mut u_estimate = vec![0.0; k];
    let mut u_stderr = vec![0.0; k];
    for r in 0..k {
        u_estimate[r] = (0..n).map(|s| y[(s * lv + idx) * k + r]).sum::<f64>() / n as f64;
        let m: Moments = (0..n).map(|s| pv[s * k + r]).collect();
        u_stderr[r] = if n > 1 { m.stderr() } else { 0.0 };
    }
    Ok(BackwardSolution {
        engine: EngineTag::Regression,
        k,
        d,
        times: (0..=big_n).map(|i| grid.time(i)).collect(),
        start_level: idx,
        y,
        z,
        y_stderr: y_se,
        u_samples: pv,
        u_estimate,
        u_stderr,
        scenario_ids: ids.clone(),
        excluded: ensemble.excluded,
        params: SchemeParams {
            picard_iters: config.picard_iters,
            seed: drivers.seed_w,
            n_scenarios: drivers.n_scenarios,
            seed_b: (drivers.seed_b != drivers.seed_w).then_some(drivers.seed_b),
            features: fmap.names(),
            degree: Some(basis.degree),
            future_b: Some(fmap.uses_future_b()),
            ridge_steps,
            ..SchemeParams::default()
        },
    })
}
