//! Numerical checks linking the backward solver, the path-dependent SPDE
//! and the path-space calculus. Every check returns a [`CheckReport`].

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::functional::{PathFunctional, Regularity};
use crate::models::Model;
use crate::path_space::{Path, TimeGrid};
use crate::rng::Uniforms;
use crate::solver::{solve, solve_nested, Engine, NestedConfig};

mod comparison;
mod convergence;
mod envelopes;
mod feynman_kac;
mod flow;
mod zcheck;

pub use comparison::{comparison_check, ComparisonConfig};
pub use convergence::{discretization_convergence_check, ito_residual_convergence, DiscretizationConfig, ItoResidualKind};
pub use envelopes::{moment_envelope_check, regularity_check, EnvelopeConfig, RegularityConfig};
pub use feynman_kac::{feynman_kac_forward_check, feynman_kac_reverse_check, spde_residual, ReverseConfig, SpdeResidual};
pub use flow::{flow_check, FlowConfig};
pub use zcheck::{z_growth_check, z_representation_check, ZCheckConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleDetail {
    pub label: String,
    pub statistic: f64,
    pub reference: f64,
    pub tolerance: f64,
}

impl SampleDetail {
    pub fn new(label: impl Into<String>, statistic: f64, reference: f64, tolerance: f64) -> Self {
        SampleDetail { label: label.into(), statistic, reference, tolerance }
    }
}

/// Per-sample rows kept in a report, worst first.
pub const MAX_DETAILS: usize = 5000;

/// Outcome of one check; `passed` is exactly `statistic <= threshold`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub name: String,
    pub statistic: f64,
    pub threshold: f64,
    pub passed: bool,
    pub n_samples: usize,
    /// Per-sample rows, worst first.
    pub details: Vec<SampleDetail>,
    /// Auxiliary scalars (fitted constants, component statistics, exclusions).
    pub extras: BTreeMap<String, f64>,
}

impl CheckReport {
    pub fn new(name: impl Into<String>, statistic: f64, threshold: f64, n_samples: usize, mut details: Vec<SampleDetail>) -> Self {
        details.sort_by(|a, b| (b.statistic - b.tolerance).total_cmp(&(a.statistic - a.tolerance)));
        details.truncate(MAX_DETAILS);
        let passed = statistic <= threshold;
        if !passed && details.is_empty() {
            details.push(SampleDetail::new("aggregate", statistic, f64::NAN, threshold));
        }
        CheckReport { name: name.into(), statistic, threshold, passed, n_samples, details, extras: BTreeMap::new() }
    }

    pub fn with_extra(mut self, key: &str, value: f64) -> Self {
        self.extras.insert(key.to_string(), value);
        self
    }

    pub fn write_json<W: Write>(&self, w: W) -> Result<()> {
        serde_json::to_writer_pretty(w, self)?;
        Ok(())
    }

    /// `label,statistic,reference,tolerance`, one row per sample.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "label,statistic,reference,tolerance")?;
        for d in &self.details {
            writeln!(w, "{},{:?},{:?},{:?}", d.label, d.statistic, d.reference, d.tolerance)?;
        }
        Ok(())
    }
}

/// `u` as a path functional, computed by a solver engine.
///
/// The nested variant picks, at each path, the largest number of coarse steps
/// not above `max_steps` that divides the remaining grid steps.
pub struct SolverFunctional<'a> {
    pub model: &'a Model,
    pub engine: FunctionalEngine,
}

#[derive(Clone, Debug, PartialEq)]
pub enum FunctionalEngine {
    Nested { branching: usize, max_steps: usize, outer_samples: usize, seed: u64, frozen_b: Option<Vec<f64>> },
    Fixed(Engine),
}

impl<'a> SolverFunctional<'a> {
    pub fn nested(model: &'a Model, branching: usize, max_steps: usize) -> Self {
        SolverFunctional {
            model,
            engine: FunctionalEngine::Nested { branching, max_steps, outer_samples: 1, seed: 0, frozen_b: None },
        }
    }

    pub fn with_frozen_b(mut self, db: Vec<f64>) -> Self {
        if let FunctionalEngine::Nested { frozen_b, .. } = &mut self.engine {
            *frozen_b = Some(db);
        }
        self
    }
}

pub(crate) fn largest_divisor_at_most(n: usize, cap: usize) -> usize {
    (1..=cap.min(n).max(1)).rev().find(|s| n % s == 0).unwrap_or(1)
}

impl PathFunctional for SolverFunctional<'_> {
    fn output_dim(&self) -> usize {
        self.model.dims.k
    }

    fn regularity(&self) -> Regularity {
        Regularity::C12
    }

    fn eval(&self, p: &Path) -> Result<Vec<f64>> {
        let remaining = p.grid().steps() - p.current_index();
        if remaining == 0 {
            return Ok(self.model.terminal(p));
        }
        match &self.engine {
            FunctionalEngine::Nested { branching, max_steps, outer_samples, seed, frozen_b } => {
                let cfg = NestedConfig {
                    steps: largest_divisor_at_most(remaining, *max_steps),
                    branching: *branching,
                    outer_samples: *outer_samples,
                    seed: *seed,
                    frozen_b: frozen_b.clone(),
                    ..NestedConfig::default()
                };
                Ok(solve_nested(self.model, p, &cfg)?.u_estimate)
            }
            FunctionalEngine::Fixed(engine) => Ok(solve(self.model, p, engine)?.u_estimate),
        }
    }
}

/// Random initial paths: a random-walk prefix up to a random time in
/// `[0, max_frac T]`, shifted by a random offset of log-uniform size in
/// `[0.05, max_offset]`.
pub fn random_initial_paths(grid: TimeGrid, d: usize, count: usize, max_frac: f64, max_offset: f64, seed: u64) -> Result<Vec<Path>> {
    let mut rng = Uniforms::new(seed);
    let max_idx = ((grid.steps() as f64) * max_frac).floor() as usize;
    (0..count)
        .map(|_| {
            let idx = rng.index(max_idx + 1);
            let lo = 0.05f64.min(max_offset).ln();
            let scale = rng.range(lo, max_offset.ln()).exp();
            let mut x: Vec<f64> = (0..d).map(|_| scale * if rng.next() < 0.5 { -1.0 } else { 1.0 }).collect();
            let step = grid.dt().sqrt();
            let mut flat = Vec::with_capacity((idx + 1) * d);
            flat.extend_from_slice(&x);
            for _ in 0..idx {
                for v in x.iter_mut() {
                    *v += step * rng.normal();
                }
                flat.extend_from_slice(&x);
            }
            Path::from_flat(grid, d, flat)
        })
        .collect()
}

/// Envelope fit shared by the growth and regularity checks.
///
/// Samples are split at the median of `magnitude`; the envelope constant is the
/// largest ratio `statistic / shape` on the lower half, and a sample of the
/// upper half violates it when `statistic - 3 stderr > 5 C shape`. This tests
/// the growth exponent `q` out of sample instead of by construction.
pub(crate) struct Envelope {
    pub constant: f64,
    pub max_ratio: f64,
    pub violations: usize,
    pub details: Vec<SampleDetail>,
}

pub(crate) const ENVELOPE_MARGIN: f64 = 5.0;

pub(crate) fn fit_envelope(labels: &[String], stat: &[f64], stderr: &[f64], shape: &[f64], magnitude: &[f64]) -> Envelope {
    let n = stat.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| magnitude[a].total_cmp(&magnitude[b]).then(a.cmp(&b)));
    let split = n.div_ceil(2);
    let ratio = |j: usize| if shape[j] > 0.0 { stat[j] / shape[j] } else if stat[j] <= 3.0 * stderr[j] { 0.0 } else { f64::INFINITY };
    let constant = order[..split].iter().map(|&j| ratio(j)).fold(0.0, f64::max);
    let max_ratio = (0..n).map(ratio).fold(0.0, f64::max);
    let mut violations = 0;
    let mut details = Vec::with_capacity(n);
    for (rank, &j) in order.iter().enumerate() {
        let bound = ENVELOPE_MARGIN * constant * shape[j];
        let excess = stat[j] - 3.0 * stderr[j];
        if rank >= split && (excess > bound || !stat[j].is_finite()) {
            violations += 1;
        }
        details.push(SampleDetail::new(labels[j].clone(), excess, stat[j], bound));
    }
    if !constant.is_finite() {
        violations += 1;
    }
    Envelope { constant, max_ratio, violations, details }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn report_invariants() {
        let r = CheckReport::new("x", 2.0, 1.0, 3, vec![]);
        assert!(!r.passed && !r.details.is_empty());
        let r = CheckReport::new("x", 1.0, 1.0, 3, vec![SampleDetail::new("a", 0.1, 0.0, 1.0), SampleDetail::new("b", 0.9, 0.0, 1.0)]);
        assert!(r.passed);
        assert_eq!(r.details[0].label, "b");
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 3);
        let mut buf = Vec::new();
        r.write_json(&mut buf).unwrap();
        let back: CheckReport = serde_json::from_slice(&buf).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn envelope_detects_faster_growth() {
        let mags: Vec<f64> = (1..=40).map(|i| i as f64 / 5.0).collect();
        let labels: Vec<String> = (0..40).map(|i| i.to_string()).collect();
        let zero = vec![0.0; 40];
        let shape: Vec<f64> = mags.iter().map(|m| 1.0 + m).collect();
        let linear: Vec<f64> = mags.iter().map(|m| 2.0 * (1.0 + m)).collect();
        assert_eq!(fit_envelope(&labels, &linear, &zero, &shape, &mags).violations, 0);
        let quartic: Vec<f64> = mags.iter().map(|m| 1.0 + m.powi(4)).collect();
        let e = fit_envelope(&labels, &quartic, &zero, &shape, &mags);
        assert!(e.violations > 0);
        assert!(e.max_ratio > e.constant);
    }

    #[test]
    fn divisors_and_random_paths() {
        assert_eq!(largest_divisor_at_most(16, 4), 4);
        assert_eq!(largest_divisor_at_most(13, 4), 1);
        assert_eq!(largest_divisor_at_most(9, 4), 3);
        let g = TimeGrid::new(1.0, 16).unwrap();
        let a = random_initial_paths(g, 2, 30, 0.5, 2.0, 5).unwrap();
        let b = random_initial_paths(g, 2, 30, 0.5, 2.0, 5).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|p| p.current_index() <= 8 && p.dim() == 2));
        assert!(a.iter().any(|p| p.current_index() > 0));
    }
}
