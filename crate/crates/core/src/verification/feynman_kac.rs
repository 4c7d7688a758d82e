use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{CheckReport, SampleDetail, SolverFunctional};
use crate::error::{Error, Result};
use crate::functional::{FiniteDifference, PathFunctional, SmoothFunctional};
use crate::models::Model;
use crate::path_space::{euclidean, Path};
use crate::simulation::{sample_drivers, simulate_forward, BrownianPair, ScenarioEnsemble};
use crate::solver::{evaluate_u, Engine};
use crate::stats::{mean, rms};

/// Components of the discrete SPDE residual along one forward path.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SpdeResidual {
    /// `u(X_t) - Φ(X_T) - Σ f Δt - Σ g ΔB + Σ σ D_x u ΔW`
    pub total: f64,
    /// `Σ [u(X_{t_i}) - u(X_{t_i} extended flat to t_{i+1}) - (ℒu + f) Δt]`
    pub horizontal: f64,
    /// `Σ [u(extended) - u(X_{t_{i+1}}) + ℒu Δt + σ D_x u ΔW_i]`
    pub vertical: f64,
    /// Mean square of the pointwise defect `D_t u + ℒu + f` over the path.
    pub defect_ms: f64,
    /// Finite-difference error propagated into `horizontal`.
    pub fd_error: f64,
    pub flagged: bool,
}

fn contract(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `ℒu = ½ tr(σσᵀ D_xx u) + ⟨b, D_x u⟩` per output component.
fn generator(k: usize, d: usize, b: &[f64], s: &[f64], dx: &[f64], dxx: &[f64]) -> Vec<f64> {
    let mut a = vec![0.0; d * d];
    for r in 0..d {
        for c in 0..d {
            a[r * d + c] = (0..d).map(|j| s[r * d + j] * s[c * d + j]).sum();
        }
    }
    (0..k)
        .map(|i| 0.5 * contract(&a, &dxx[i * d * d..(i + 1) * d * d]) + contract(b, &dx[i * d..(i + 1) * d]))
        .collect()
}

/// `Z = D_x u σ`, row-major `k x d`.
fn z_of(k: usize, d: usize, dx: &[f64], s: &[f64]) -> Vec<f64> {
    let mut z = vec![0.0; k * d];
    for i in 0..k {
        for c in 0..d {
            z[i * d + c] = (0..d).map(|j| dx[i * d + j] * s[j * d + c]).sum();
        }
    }
    z
}

pub(crate) fn path_residual(
    model: &Model,
    u: &dyn SmoothFunctional,
    x: &Path,
    start: usize,
    dw: &[f64],
    db: &[f64],
    flag_tol: f64,
) -> Result<SpdeResidual> {
    let (d, k, l) = (model.dims.d, model.dims.k, model.dims.l);
    let grid = x.grid();
    let big_n = grid.steps();
    let dt = grid.dt();
    let mut out = SpdeResidual::default();
    let first = x.restrict_to_index(start);
    let mut u_cur = u.eval(&first)?;
    let u0 = u_cur.clone();
    let mut sum_f = vec![0.0; k];
    let mut sum_g = vec![0.0; k];
    let mut sum_z = vec![0.0; k];
    let mut horizontal = vec![0.0; k];
    let mut vertical = vec![0.0; k];
    let mut defect_sq = 0.0;
    let flag = |e: &crate::functional::DerivativeEstimate| {
        let scale = 1.0 + e.value.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        e.flagged(flag_tol * scale)
    };
    for i in start..big_n {
        let q = x.restrict_to_index(i);
        let next = x.restrict_to_index(i + 1);
        let b = model.drift(&q);
        let s = model.diffusion(&q);
        let dx = u.d_x(&q)?;
        let dxx = u.d_xx(&q)?;
        let dtu = u.d_t(&q)?;
        out.flagged |= flag(&dx) || flag(&dxx) || flag(&dtu);
        let gen = generator(k, d, &b, &s, &dx.value, &dxx.value);
        let z = z_of(k, d, &dx.value, &s);
        let f = model.driver(&q, &u_cur, &z);
        let u_ext = u.eval(&q.extend_flat_to_index(i + 1))?;
        let u_next = u.eval(&next)?;
        let dxn = u.d_x(&next)?;
        let z_next = z_of(k, d, &dxn.value, &model.diffusion(&next));
        let g = model.noise(&next, &u_next, &z_next);
        let w = &dw[i * d..(i + 1) * d];
        let bb = &db[i * l..(i + 1) * l];
        for r in 0..k {
            let gdb: f64 = (0..l).map(|j| g[r * l + j] * bb[j]).sum();
            let zdw = contract(&z[r * d..(r + 1) * d], w);
            horizontal[r] += u_cur[r] - u_ext[r] - (gen[r] + f[r]) * dt - gdb;
            vertical[r] += u_ext[r] - u_next[r] + gen[r] * dt + zdw;
            defect_sq += (dtu.value[r] + gen[r] + f[r]).powi(2);
            sum_f[r] += f[r] * dt;
            sum_g[r] += gdb;
            sum_z[r] += zdw;
        }
        let a_norm: f64 = s.iter().map(|v| v * v).sum();
        out.fd_error += (0.5 * a_norm * dxx.est_error + (euclidean(&b) + model.lip_c * a_norm.sqrt()) * dx.est_error) * dt;
        u_cur = u_next;
    }
    let phi = model.terminal(x);
    let total: Vec<f64> = (0..k).map(|r| u0[r] - phi[r] - sum_f[r] - sum_g[r] + sum_z[r]).collect();
    for r in 0..k {
        horizontal[r] += u_cur[r] - phi[r];
    }
    // signed for scalar outputs, Euclidean norm otherwise
    let collapse = |v: &[f64]| if k == 1 { v[0] } else { euclidean(v) };
    out.total = collapse(&total);
    out.horizontal = collapse(&horizontal);
    out.vertical = collapse(&vertical);
    out.defect_ms = defect_sq / (big_n - start).max(1) as f64 / k as f64;
    Ok(out)
}

fn residuals(
    model: &Model,
    u: &dyn SmoothFunctional,
    ensemble: &ScenarioEnsemble,
    drivers: &BrownianPair,
    flag_tol: f64,
) -> Result<Vec<SpdeResidual>> {
    let start = ensemble.start_index();
    ensemble
        .paths
        .par_iter()
        .zip(&ensemble.scenario_ids)
        .map(|(x, &s)| path_residual(model, u, x, start, drivers.dw_path(s), drivers.db_path(s), flag_tol))
        .collect()
}

fn residual_report(
    name: &str,
    rs: &[SpdeResidual],
    per_path: fn(&SpdeResidual) -> f64,
    threshold: f64,
) -> CheckReport {
    let kept: Vec<SpdeResidual> = rs.iter().filter(|r| !r.flagged).cloned().collect();
    let details = kept
        .iter()
        .enumerate()
        .map(|(i, r)| SampleDetail::new(format!("path{i}"), per_path(r).abs(), r.total, threshold))
        .collect();
    let statistic = |k: &[SpdeResidual]| rms(&k.iter().map(per_path).collect::<Vec<_>>());
    let stat = if kept.is_empty() { f64::INFINITY } else { statistic(&kept) };
    let col = |f: fn(&SpdeResidual) -> f64| -> Vec<f64> { kept.iter().map(f).collect() };
    CheckReport::new(name, stat, threshold, kept.len(), details)
        .with_extra("rms_total", rms(&col(|r| r.total)))
        .with_extra("rms_horizontal", rms(&col(|r| r.horizontal)))
        .with_extra("rms_vertical", rms(&col(|r| r.vertical)))
        .with_extra("rms_defect", mean(&col(|r| r.defect_ms)).sqrt())
        .with_extra("rms_fd_error", rms(&col(|r| r.fd_error)))
        .with_extra("excluded", (rs.len() - kept.len()) as f64)
        .with_extra("exclusion_rate", (rs.len() - kept.len()) as f64 / rs.len().max(1) as f64)
}

/// Discrete residual of the path-dependent SPDE along the forward paths
/// simulated from `initial` with `drivers`; statistic = RMS of the total residual.
pub fn spde_residual(
    model: &Model,
    u: &dyn SmoothFunctional,
    initial: &Path,
    drivers: &BrownianPair,
    tolerance: f64,
) -> Result<CheckReport> {
    let ensemble = simulate_forward(model, initial, drivers)?;
    let rs = residuals(model, u, &ensemble, drivers, 1e-2)?;
    Ok(residual_report("spde_residual", &rs, |r| r.total, tolerance))
}

/// Closed-form `u` against the solver over the given initial paths. Each
/// sample scores `max(rel_err / tolerance, |diff| / (3 stderr))`; passes when
/// every score is at most 1.
pub fn feynman_kac_forward_check(
    model: &Model,
    u: &dyn PathFunctional,
    initials: &[Path],
    engine: &Engine,
    tolerance: f64,
) -> Result<CheckReport> {
    if tolerance <= 0.0 {
        return Err(Error::Domain("tolerance must be positive".into()));
    }
    let mut details = Vec::with_capacity(initials.len());
    let mut score: f64 = 0.0;
    let (mut max_rel, mut max_z): (f64, f64) = (0.0, 0.0);
    for (j, p) in initials.iter().enumerate() {
        let exact = u.eval(p)?;
        let est = evaluate_u(model, p, engine)?;
        for r in 0..exact.len() {
            let diff = (est.value[r] - exact[r]).abs();
            let rel = diff / (1.0 + exact[r].abs());
            let z = if est.stderr[r] > 0.0 { diff / est.stderr[r] } else if diff <= 1e-12 * (1.0 + exact[r].abs()) { 0.0 } else { f64::INFINITY };
            max_rel = max_rel.max(rel);
            max_z = max_z.max(z);
            let s = (rel / tolerance).max(z / 3.0);
            score = score.max(s);
            details.push(SampleDetail::new(format!("t={:?} path{j} comp{r}", p.current_time()), rel, exact[r], tolerance));
        }
    }
    Ok(CheckReport::new("feynman_kac_forward", score, 1.0, initials.len(), details)
        .with_extra("max_relative_error", max_rel)
        .with_extra("max_z_score", max_z)
        .with_extra("tolerance", tolerance))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReverseConfig {
    pub n_paths: usize,
    pub seed: u64,
    #[serde(default = "default_branching")]
    pub branching: usize,
    #[serde(default = "default_max_steps")]
    pub max_steps: usize,
    pub tolerance: f64,
    #[serde(default = "default_rel_bump")]
    pub rel_bump: f64,
}

fn default_branching() -> usize {
    8
}

fn default_max_steps() -> usize {
    4
}

fn default_rel_bump() -> f64 {
    1e-3
}

/// `u` built by the nested engine, differentiated by finite differences and
/// fed to the SPDE residual. The statistic is the RMS horizontal residual,
/// which carries the SPDE defect; the threshold is `tolerance` plus three
/// times the RMS finite-difference error propagated into it.
pub fn feynman_kac_reverse_check(model: &Model, initial: &Path, cfg: &ReverseConfig) -> Result<CheckReport> {
    if !model.noise_free {
        return Err(Error::Precondition(
            "the reverse check needs g = 0: with backward noise u is a random field and a B-averaged u does not solve the SPDE".into(),
        ));
    }
    let u = FiniteDifference::new(SolverFunctional::nested(model, cfg.branching, cfg.max_steps)).with_bump(cfg.rel_bump);
    let drivers = sample_drivers(initial.grid(), cfg.n_paths, model.dims.d, model.dims.l, cfg.seed)?;
    let ensemble = simulate_forward(model, initial, &drivers)?;
    let rs = residuals(model, &u, &ensemble, &drivers, 1e-2)?;
    let fd = rms(&rs.iter().filter(|r| !r.flagged).map(|r| r.fd_error).collect::<Vec<_>>());
    let threshold = cfg.tolerance + 3.0 * fd;
    let report = residual_report("feynman_kac_reverse", &rs, |r| r.horizontal, threshold);
    Ok(report.with_extra("tolerance", cfg.tolerance))
}
