use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::quadrature::tensor_rule;
use super::{BackwardSolution, EngineTag, PicardMonitor, SchemeParams};
use crate::error::{check_dim, Error, Result};
use crate::models::Model;
use crate::path_space::Path;
use crate::rng::{Driver, GaussianStream};
use crate::stats::Moments;

pub const NESTED_MAX_STEPS: usize = 8;
pub const NESTED_LEAF_LIMIT: u128 = 1_000_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NestedConfig {
    /// Coarse steps between `t` and `T`; must divide the remaining fine steps.
    pub steps: usize,
    /// Gauss-Hermite nodes per dimension and step.
    pub branching: usize,
    /// Sampled `B` paths; ignored for noise-free models or a frozen `B`.
    #[serde(default = "default_outer")]
    pub outer_samples: usize,
    pub seed: u64,
    #[serde(default = "default_picard")]
    pub picard_iters: usize,
    /// Fine-grid `B` increments over `[0, T]` (`N x l`) to condition on.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frozen_b: Option<Vec<f64>>,
}

fn default_outer() -> usize {
    64
}

fn default_picard() -> usize {
    2
}

impl Default for NestedConfig {
    fn default() -> Self {
        NestedConfig { steps: 4, branching: 8, outer_samples: default_outer(), seed: 0, picard_iters: default_picard(), frozen_b: None }
    }
}

struct Tree<'a> {
    model: &'a Model,
    points: Vec<f64>,
    weights: Vec<f64>,
    stride: usize,
    steps: usize,
    h: f64,
    picard: usize,
    first_fine: usize,
    /// Coarse `B` increments, `steps x l`.
    db: Vec<f64>,
}

struct LevelSums {
    y: Vec<f64>,
    z: Vec<f64>,
}

impl Tree<'_> {
    fn child(&self, path: &Path, j: usize, b: &[f64], s: &[f64]) -> Result<(Path, Vec<f64>)> {
        let d = path.dim();
        let dw: Vec<f64> = self.points[j * d..(j + 1) * d].iter().map(|x| x * self.h.sqrt()).collect();
        let x = path.endpoint().to_vec();
        let next: Vec<f64> = (0..d)
            .map(|r| x[r] + b[r] * self.h + (0..d).map(|c| s[r * d + c] * dw[c]).sum::<f64>())
            .collect();
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::Evaluation("forward state blew up inside the quadrature tree".into()));
        }
        let mut child = path.clone();
        for _ in 1..self.stride {
            child.push(&x);
        }
        child.push(&next);
        Ok((child, dw))
    }

    fn node(&self, path: &Path, level: usize, weight: f64, acc: &mut LevelSums) -> Result<(Vec<f64>, Vec<f64>)> {
        let model = self.model;
        let (d, k, l) = (model.dims.d, model.dims.k, model.dims.l);
        let kd = k * d;
        let b = model.drift(path);
        let s = model.diffusion(path);
        let m = self.weights.len();
        let db = &self.db[level * l..(level + 1) * l];
        let mut c = vec![0.0; m * k];
        let mut f = vec![0.0; m * k];
        let mut dws = Vec::with_capacity(m * d);
        let combine = |child: &Path, yc: &[f64], zc: &[f64], c: &mut [f64], f: &mut [f64]| -> Result<()> {
            let g = model.noise(child, yc, zc);
            let fv = model.driver(child, yc, zc);
            check_dim(k, fv.len(), "driver output")?;
            for r in 0..k {
                c[r] = yc[r] + (0..l).map(|j| g[r * l + j] * db[j]).sum::<f64>();
                f[r] = fv[r];
            }
            Ok(())
        };
        if level + 1 == self.steps {
            let mut children = Vec::with_capacity(m);
            let mut ys = vec![0.0; m * k];
            for j in 0..m {
                let (child, dw) = self.child(path, j, &b, &s)?;
                let phi = model.terminal(&child);
                check_dim(k, phi.len(), "terminal output")?;
                ys[j * k..(j + 1) * k].copy_from_slice(&phi);
                dws.extend(dw);
                children.push(child);
            }
            let y_bar: Vec<f64> = (0..k).map(|r| (0..m).map(|j| self.weights[j] * ys[j * k + r]).sum()).collect();
            for r in 0..k {
                acc.y[self.steps * k + r] += weight * y_bar[r];
            }
            let z_term = self.project_z(&ys, &y_bar, &dws);
            for (j, child) in children.iter().enumerate() {
                combine(child, &ys[j * k..(j + 1) * k], &z_term, &mut c[j * k..(j + 1) * k], &mut f[j * k..(j + 1) * k])?;
            }
        } else {
            for j in 0..m {
                let (child, dw) = self.child(path, j, &b, &s)?;
                let (yc, zc) = self.node(&child, level + 1, weight * self.weights[j], acc)?;
                combine(&child, &yc, &zc, &mut c[j * k..(j + 1) * k], &mut f[j * k..(j + 1) * k])?;
                dws.extend(dw);
            }
        }
        let c_hat: Vec<f64> = (0..k).map(|r| (0..m).map(|j| self.weights[j] * c[j * k + r]).sum()).collect();
        let z = self.project_z(&c, &c_hat, &dws);
        let mut y: Vec<f64> =
            (0..k).map(|r| c_hat[r] + self.h * (0..m).map(|j| self.weights[j] * f[j * k + r]).sum::<f64>()).collect();
        let mut monitor = PicardMonitor::new();
        for _ in 0..self.picard {
            let fv = model.driver(path, &y, &z);
            let updated: Vec<f64> = (0..k).map(|r| c_hat[r] + self.h * fv[r]).collect();
            let norm = updated.iter().zip(&y).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            y = updated;
            monitor.update(norm, self.first_fine + level * self.stride, model.alpha)?;
        }
        if y.iter().chain(&z).any(|v| !v.is_finite()) {
            return Err(Error::Evaluation(format!("non-finite solution at coarse level {level}")));
        }
        for r in 0..k {
            acc.y[level * k + r] += weight * y[r];
        }
        for r in 0..kd {
            acc.z[level * kd + r] += weight * z[r];
        }
        Ok((y, z))
    }

    /// `Σ_j w_j (v_j - v̄) ΔW_jᵀ / h`, row-major `k x d`.
    fn project_z(&self, v: &[f64], v_bar: &[f64], dws: &[f64]) -> Vec<f64> {
        let k = v_bar.len();
        let d = dws.len() / self.weights.len();
        let mut z = vec![0.0; k * d];
        for (j, w) in self.weights.iter().enumerate() {
            for r in 0..k {
                let e = v[j * k + r] - v_bar[r];
                for c in 0..d {
                    z[r * d + c] += w * e * dws[j * d + c] / self.h;
                }
            }
        }
        z
    }
}

/// Quadrature-tree engine: `W` is integrated exactly on a Gauss-Hermite tree
/// over the coarse grid, `B` is sampled (or frozen) outside the tree.
///
/// The forward path lives on the fine grid, held flat inside each coarse block
/// and jumping at its end, so path functionals see the same grid as elsewhere.
pub fn solve_nested(model: &Model, initial: &Path, cfg: &NestedConfig) -> Result<BackwardSolution> {
    let (d, k, l) = (model.dims.d, model.dims.k, model.dims.l);
    check_dim(d, initial.dim(), "initial path")?;
    if cfg.steps == 0 || cfg.branching == 0 {
        return Err(Error::Domain("nested engine needs positive steps and branching".into()));
    }
    let leaves = (cfg.branching as u128)
        .checked_pow(d as u32)
        .and_then(|m| m.checked_pow(cfg.steps as u32))
        .unwrap_or(u128::MAX);
    if cfg.steps > NESTED_MAX_STEPS || leaves > NESTED_LEAF_LIMIT {
        return Err(Error::Budget { estimate: leaves, limit: NESTED_LEAF_LIMIT });
    }
    let grid = initial.grid();
    let big_n = grid.steps();
    let idx = initial.current_index();
    let remaining = big_n - idx;
    if remaining == 0 || remaining % cfg.steps != 0 {
        return Err(Error::GridAlignment(format!(
            "{} coarse steps do not divide the {remaining} remaining fine steps",
            cfg.steps
        )));
    }
    let stride = remaining / cfg.steps;
    let (points, weights) = tensor_rule(cfg.branching, d);

    let coarse = |fine: &[f64]| -> Vec<f64> {
        let mut out = vec![0.0; cfg.steps * l];
        for c in 0..cfg.steps {
            for i in 0..stride {
                let step = idx + c * stride + i;
                for j in 0..l {
                    out[c * l + j] += fine[step * l + j];
                }
            }
        }
        out
    };
    let outer: Vec<Vec<f64>> = if let Some(fb) = &cfg.frozen_b {
        check_dim(big_n * l, fb.len(), "frozen B increments")?;
        vec![coarse(fb)]
    } else if model.noise_free {
        vec![vec![0.0; cfg.steps * l]]
    } else {
        if cfg.outer_samples == 0 {
            return Err(Error::Domain("nested engine needs at least one outer B sample".into()));
        }
        let scale = grid.dt().sqrt();
        (0..cfg.outer_samples)
            .map(|s| {
                let mut stream = GaussianStream::new(cfg.seed, s as u64, Driver::B);
                let mut fine = vec![0.0; big_n * l];
                for step in fine.chunks_exact_mut(l) {
                    stream.fill_step(step);
                }
                fine.iter_mut().for_each(|v| *v *= scale);
                coarse(&fine)
            })
            .collect()
    };

    let h = stride as f64 * grid.dt();
    let kd = k * d;
    let results: Vec<Result<LevelSums>> = outer
        .into_par_iter()
        .map(|db| {
            let tree = Tree {
                model,
                points: points.clone(),
                weights: weights.clone(),
                stride,
                steps: cfg.steps,
                h,
                picard: cfg.picard_iters,
                first_fine: idx,
                db,
            };
            let mut acc = LevelSums { y: vec![0.0; (cfg.steps + 1) * k], z: vec![0.0; cfg.steps * kd] };
            tree.node(initial, 0, 1.0, &mut acc)?;
            Ok(acc)
        })
        .collect();
    let sums: Vec<LevelSums> = results.into_iter().collect::<Result<_>>()?;
    let n = sums.len();
    let mut y = Vec::with_capacity(n * (cfg.steps + 1) * k);
    let mut z = Vec::with_capacity(n * cfg.steps * kd);
    let mut u_samples = Vec::with_capacity(n * k);
    for s in &sums {
        y.extend_from_slice(&s.y);
        z.extend_from_slice(&s.z);
        u_samples.extend_from_slice(&s.y[..k]);
    }
    let mut u_estimate = vec![0.0; k];
    let mut u_stderr = vec![0.0; k];
    for r in 0..k {
        let m: Moments = (0..n).map(|s| u_samples[s * k + r]).collect();
        u_estimate[r] = m.mean();
        u_stderr[r] = if n > 1 { m.stderr() } else { 0.0 };
    }
    Ok(BackwardSolution {
        engine: EngineTag::Nested,
        k,
        d,
        times: (0..=cfg.steps).map(|c| grid.time(idx + c * stride)).collect(),
        start_level: 0,
        y_stderr: vec![0.0; y.len()],
        y,
        z,
        u_samples,
        u_estimate,
        u_stderr,
        scenario_ids: (0..n).collect(),
        excluded: 0,
        params: SchemeParams {
            picard_iters: cfg.picard_iters,
            seed: cfg.seed,
            n_scenarios: n,
            coarse_steps: Some(cfg.steps),
            branching: Some(cfg.branching),
            frozen_b: Some(cfg.frozen_b.is_some()),
            ..SchemeParams::default()
        },
    })
}
