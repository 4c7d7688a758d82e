use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{fit_envelope, random_initial_paths, CheckReport, SampleDetail};
use crate::error::{Error, Result};
use crate::models::Model;
use crate::path_space::{euclidean, Path, TimeGrid};
use crate::rng::{derive_seed, Uniforms};
use crate::simulation::{sample_drivers, simulate_forward, BrownianPair};
use crate::solver::{solve_regression_on, BackwardSolution, RegressionConfig};
use crate::stats::Moments;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeConfig {
    #[serde(default = "default_probes")]
    pub n_probes: usize,
    #[serde(default = "default_scenarios")]
    pub n_scenarios: usize,
    pub seed: u64,
    #[serde(default = "default_p")]
    pub p: Vec<f64>,
    /// Growth exponent; `p (m + 1)` when absent.
    #[serde(default)]
    pub q: Option<f64>,
    #[serde(default = "default_offset")]
    pub max_offset: f64,
    #[serde(default)]
    pub regression: RegressionConfig,
}

fn default_probes() -> usize {
    100
}
fn default_scenarios() -> usize {
    2000
}
fn default_p() -> Vec<f64> {
    vec![2.0, 4.0]
}
fn default_offset() -> f64 {
    3.0
}

impl EnvelopeConfig {
    pub fn new(seed: u64) -> Self {
        EnvelopeConfig {
            n_probes: default_probes(),
            n_scenarios: default_scenarios(),
            seed,
            p: default_p(),
            q: None,
            max_offset: default_offset(),
            regression: RegressionConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegularityConfig {
    #[serde(default = "default_probes")]
    pub n_pairs: usize,
    #[serde(default = "default_scenarios")]
    pub n_scenarios: usize,
    pub seed: u64,
    #[serde(default = "default_p")]
    pub p: Vec<f64>,
    #[serde(default)]
    pub q: Option<f64>,
    /// Bump direction `e_i` of the difference quotients.
    #[serde(default)]
    pub direction: usize,
    #[serde(default = "default_offset")]
    pub max_offset: f64,
    #[serde(default)]
    pub regression: RegressionConfig,
}

impl RegularityConfig {
    pub fn new(seed: u64) -> Self {
        RegularityConfig {
            n_pairs: default_probes(),
            n_scenarios: default_scenarios(),
            seed,
            p: default_p(),
            q: None,
            direction: 0,
            max_offset: default_offset(),
            regression: RegressionConfig::default(),
        }
    }
}

fn check_p(p: &[f64]) -> Result<()> {
    if p.is_empty() || p.iter().any(|&p| !(p >= 2.0) || !p.is_finite()) {
        return Err(Error::Precondition(format!("moment orders must be finite and at least 2, got {p:?}")));
    }
    Ok(())
}

fn solve_from(model: &Model, p: &Path, drivers: &BrownianPair, cfg: &RegressionConfig) -> Result<BackwardSolution> {
    let ens = simulate_forward(model, p, drivers)?;
    solve_regression_on(model, &ens, drivers, cfg)
}

/// Per-scenario `sup_{level >= from} |a - b|` and `Σ |za - zb|² Δt` over the
/// same range, with `b` treated as zero when absent.
fn pathwise(a: &BackwardSolution, b: Option<&BackwardSolution>, from: usize, dt: f64) -> (Vec<f64>, Vec<f64>) {
    let levels = a.times.len();
    let n = a.n_scenarios();
    let mut sup = vec![0.0; n];
    let mut energy = vec![0.0; n];
    let mut buf = vec![0.0; a.k * a.d];
    for s in 0..n {
        for i in from..levels {
            let ya = a.y_at(s, i);
            let dy: Vec<f64> = match b {
                Some(b) => ya.iter().zip(b.y_at(s, i)).map(|(x, y)| x - y).collect(),
                None => ya.to_vec(),
            };
            sup[s] = f64::max(sup[s], euclidean(&dy));
            if i + 1 < levels {
                let za = a.z_at(s, i);
                match b {
                    Some(b) => buf.iter_mut().zip(za.iter().zip(b.z_at(s, i))).for_each(|(o, (x, y))| *o = x - y),
                    None => buf.copy_from_slice(za),
                }
                energy[s] += buf.iter().map(|v| v * v).sum::<f64>() * dt;
            }
        }
    }
    (sup, energy)
}

fn moment(values: &[f64], power: f64) -> (f64, f64) {
    let m: Moments = values.iter().map(|v| v.powf(power)).collect();
    (m.mean(), m.stderr())
}

/// Per-estimator envelope input, one row per probe.
#[derive(Default)]
struct Samples {
    labels: Vec<String>,
    stat: Vec<f64>,
    stderr: Vec<f64>,
    shape: Vec<f64>,
    magnitude: Vec<f64>,
}

fn accumulate(name: &str, model: &Model, report_parts: &mut Vec<(String, usize, f64, f64, Vec<SampleDetail>)>, s: &Samples) {
    let env = fit_envelope(&s.labels, &s.stat, &s.stderr, &s.shape, &s.magnitude);
    log::debug!("{} {name}: C = {:.3e}, violations = {}", model.name, env.constant, env.violations);
    report_parts.push((name.to_string(), env.violations, env.constant, env.max_ratio, env.details));
}

fn assemble(name: &str, n_samples: usize, parts: Vec<(String, usize, f64, f64, Vec<SampleDetail>)>) -> CheckReport {
    let violations: usize = parts.iter().map(|p| p.1).sum();
    let mut details = Vec::new();
    let mut extras = Vec::new();
    for (key, v, c, r, d) in parts {
        extras.push((format!("{key}_violations"), v as f64));
        extras.push((format!("{key}_fitted_c"), c));
        extras.push((format!("{key}_max_ratio"), r));
        details.extend(d.into_iter().map(|mut d| {
            d.label = format!("{key}/{}", d.label);
            d
        }));
    }
    extras
        .into_iter()
        .fold(CheckReport::new(name, violations as f64, 0.0, n_samples, details), |r, (k, v)| r.with_extra(&k, v))
}

/// Envelopes `E sup |Y|^p <= C (1 + ‖γ_t‖^q)` and
/// `E (∫ |Z|² ds)^{p/2} <= C (1 + ‖γ_t‖^q)` over random initial paths on `grid`.
/// The statistic counts envelope violations.
pub fn moment_envelope_check(model: &Model, grid: TimeGrid, cfg: &EnvelopeConfig) -> Result<CheckReport> {
    check_p(&cfg.p)?;
    let probes = random_initial_paths(grid, model.dims.d, cfg.n_probes, 0.5, cfg.max_offset, derive_seed(cfg.seed, 0xE0))?;
    let raw: Vec<(Vec<f64>, Vec<f64>, f64)> = probes
        .par_iter()
        .enumerate()
        .map(|(j, p)| {
            let drivers = sample_drivers(grid, cfg.n_scenarios, model.dims.d, model.dims.l, derive_seed(cfg.seed, j as u64 + 1))?;
            let sol = solve_from(model, p, &drivers, &cfg.regression)?;
            let (sup, energy) = pathwise(&sol, None, sol.start_level, grid.dt());
            Ok((sup, energy, p.sup_norm()))
        })
        .collect::<Result<_>>()?;
    let mut parts = Vec::new();
    for &p in &cfg.p {
        let q = cfg.q.unwrap_or(p * (model.growth_m + 1.0));
        let mut y = Samples::default();
        let mut z = Samples::default();
        for (j, (sup, energy, norm)) in raw.iter().enumerate() {
            let shape = 1.0 + norm.powf(q);
            for (target, values, power) in [(&mut y, sup, p), (&mut z, energy, p / 2.0)] {
                let (m, se) = moment(values, power);
                target.labels.push(format!("probe{j}"));
                target.stat.push(m);
                target.stderr.push(se);
                target.shape.push(shape);
                target.magnitude.push(*norm);
            }
        }
        accumulate(&format!("p{p}_sup_y"), model, &mut parts, &y);
        accumulate(&format!("p{p}_z_energy"), model, &mut parts, &z);
    }
    Ok(assemble("moment_envelope", raw.len(), parts))
}

struct Pair {
    gamma: Path,
    gamma_bar: Path,
    h: f64,
    h_bar: f64,
}

fn bump(p: &Path, direction: usize, h: f64) -> Result<Path> {
    let mut x = vec![0.0; p.dim()];
    x[direction] = h;
    p.vertical_bump(&x)
}

/// `γ̄` is `γ` moved to a nearby time (truncated or extended flat) and perturbed
/// by a random amount at every node; `h̄` is a random relative change of `h`.
fn random_pairs(grid: TimeGrid, d: usize, cfg: &RegularityConfig) -> Result<Vec<Pair>> {
    let bases = random_initial_paths(grid, d, cfg.n_pairs, 0.5, cfg.max_offset, derive_seed(cfg.seed, 0xF0))?;
    let mut rng = Uniforms::new(derive_seed(cfg.seed, 0xF1));
    let max_idx = grid.steps() - 1;
    bases
        .into_iter()
        .map(|gamma| {
            let idx = gamma.current_index();
            let shift = rng.index(5) as isize - 2;
            let idx_bar = (idx as isize + shift).clamp(0, max_idx as isize) as usize;
            let eps = rng.range((1e-3f64).ln(), (0.3f64).ln()).exp();
            let mut flat = Vec::with_capacity((idx_bar + 1) * d);
            for j in 0..=idx_bar {
                let v = gamma.value(j.min(idx));
                flat.extend(v.iter().map(|x| x + eps * rng.range(-1.0, 1.0)));
            }
            let gamma_bar = Path::from_flat(grid, d, flat)?;
            let sign = if rng.next() < 0.5 { -1.0 } else { 1.0 };
            let h = sign * rng.range((1e-2f64).ln(), (0.5f64).ln()).exp();
            let h_bar = h * (1.0 + rng.range(-0.5, 0.5));
            Ok(Pair { gamma, gamma_bar, h, h_bar })
        })
        .collect()
}

fn quotient(up: &BackwardSolution, base: &BackwardSolution, h: f64) -> BackwardSolution {
    let mut q = base.clone();
    q.y.iter_mut().zip(&up.y).for_each(|(b, u)| *b = (u - *b) / h);
    q.z.iter_mut().zip(&up.z).for_each(|(b, u)| *b = (u - *b) / h);
    q
}

struct PairStats {
    label: String,
    sup_y: Vec<f64>,
    energy_z: Vec<f64>,
    sup_dq_y: Vec<f64>,
    energy_dq_z: Vec<f64>,
    norms: (f64, f64),
    dist: f64,
    time_order: std::cmp::Ordering,
    h: f64,
    h_bar: f64,
}

/// Empirical check of the four regularity estimates in the initial path:
/// sup-differences of `Y`, integrated `Z` differences and the corresponding
/// difference-quotient versions, each against its bound shape with a fitted
/// constant. All four solves of a pair share their Brownian increments.
pub fn regularity_check(model: &Model, grid: TimeGrid, cfg: &RegularityConfig) -> Result<CheckReport> {
    check_p(&cfg.p)?;
    if cfg.direction >= model.dims.d {
        return Err(Error::Domain(format!("direction {} out of range for d = {}", cfg.direction, model.dims.d)));
    }
    let pairs = random_pairs(grid, model.dims.d, cfg)?;
    let dt = grid.dt();
    let stats: Vec<PairStats> = pairs
        .par_iter()
        .enumerate()
        .map(|(j, pair)| {
            let drivers = sample_drivers(grid, cfg.n_scenarios, model.dims.d, model.dims.l, derive_seed(cfg.seed, j as u64 + 1))?;
            let a = solve_from(model, &pair.gamma, &drivers, &cfg.regression)?;
            let b = solve_from(model, &pair.gamma_bar, &drivers, &cfg.regression)?;
            let a_h = solve_from(model, &bump(&pair.gamma, cfg.direction, pair.h)?, &drivers, &cfg.regression)?;
            let b_h = solve_from(model, &bump(&pair.gamma_bar, cfg.direction, pair.h_bar)?, &drivers, &cfg.regression)?;
            let from = a.start_level.max(b.start_level);
            let (sup_y, energy_z) = pathwise(&a, Some(&b), from, dt);
            let (qa, qb) = (quotient(&a_h, &a, pair.h), quotient(&b_h, &b, pair.h_bar));
            let (sup_dq_y, energy_dq_z) = pathwise(&qa, Some(&qb), from, dt);
            let (na, nb) = (pair.gamma.sup_norm(), pair.gamma_bar.sup_norm());
            Ok(PairStats {
                label: format!("pair{j}"),
                sup_y,
                energy_z,
                sup_dq_y,
                energy_dq_z,
                norms: (na, nb),
                dist: pair.gamma.dist(&pair.gamma_bar)?.total,
                time_order: pair.gamma.current_index().cmp(&pair.gamma_bar.current_index()),
                h: pair.h,
                h_bar: pair.h_bar,
            })
        })
        .collect::<Result<_>>()?;
    let mut parts = Vec::new();
    for &p in &cfg.p {
        let q = cfg.q.unwrap_or(p * (model.growth_m + 1.0));
        let mut est: [Samples; 4] = Default::default();
        for s in &stats {
            let (na, nb) = s.norms;
            let mag = na.max(nb);
            let mag_h = mag.max(s.h.abs()).max(s.h_bar.abs());
            let lip = s.dist.powf(p);
            let shape_lip = (1.0 + na.powf(q) + nb.powf(q)) * lip;
            let h_term = match s.time_order {
                std::cmp::Ordering::Less => s.h.abs().powf(p),
                std::cmp::Ordering::Greater => s.h_bar.abs().powf(p),
                std::cmp::Ordering::Equal => 0.0,
            };
            let shape_dq = (1.0 + na.powf(q) + nb.powf(q) + s.h.abs().powf(q) + s.h_bar.abs().powf(q))
                * (h_term + (s.h - s.h_bar).abs().powf(p) + lip);
            let rows = [
                (&s.sup_y, p, shape_lip, mag),
                (&s.energy_z, p / 2.0, shape_lip, mag),
                (&s.sup_dq_y, p, shape_dq, mag_h),
                (&s.energy_dq_z, p / 2.0, shape_dq, mag_h),
            ];
            for (target, (values, power, shape, mag)) in est.iter_mut().zip(rows) {
                let (m, se) = moment(values, power);
                target.labels.push(s.label.clone());
                target.stat.push(m);
                target.stderr.push(se);
                target.shape.push(shape);
                target.magnitude.push(mag);
            }
        }
        for (name, s) in ["sup_y", "z_energy", "dq_sup_y", "dq_z_energy"].iter().zip(&est) {
            accumulate(&format!("p{p}_{name}"), model, &mut parts, s);
        }
    }
    Ok(assemble("regularity", stats.len(), parts))
}
