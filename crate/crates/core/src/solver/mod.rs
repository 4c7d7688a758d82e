//! Backward induction for `(Y, Z)` with a regression engine and a nested
//! quadrature engine sharing one output shape; `u(γ_t) = Y^{γ_t}(t)`.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::Model;
use crate::path_space::Path;
use crate::stats::Moments;

mod basis;
mod lsq;
mod nested;
mod quadrature;
mod regression;

pub use basis::{FeatureSpec, RegressionBasis, StateFeature, SCENARIOS_PER_FEATURE};
pub use nested::{solve_nested, NestedConfig, NESTED_LEAF_LIMIT, NESTED_MAX_STEPS};
pub use quadrature::{gauss_hermite, tensor_rule};
pub use regression::{solve_regression, solve_regression_on, RegressionConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EngineTag {
    Nested,
    Regression,
}

/// Everything needed to reproduce a solve.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SchemeParams {
    pub picard_iters: usize,
    pub seed: u64,
    pub n_scenarios: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed_b: Option<u64>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub features: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub degree: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub future_b: Option<bool>,
    /// Steps at which the regression fell back to a ridge solve.
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub ridge_steps: Vec<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub coarse_steps: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub branching: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub frozen_b: Option<bool>,
}

/// Output of either engine.
///
/// Levels are the fine grid for the regression engine and the coarse grid
/// `t = s_0 < ... < s_L = T` for the nested engine. Regression levels before
/// `start_level` repeat `Y(t)` and carry `Z = 0`.
#[derive(Clone, Debug)]
pub struct BackwardSolution {
    pub engine: EngineTag,
    pub k: usize,
    pub d: usize,
    pub times: Vec<f64>,
    pub start_level: usize,
    /// `n x (L + 1) x k`
    pub y: Vec<f64>,
    /// `n x L x (k d)`, row-major `k x d` per entry.
    pub z: Vec<f64>,
    /// Regression standard error of each `y` entry (zero for the nested engine).
    pub y_stderr: Vec<f64>,
    /// Per-scenario unbiased contributions to `u` (`n x k`); their mean is
    /// `u_estimate` for the nested engine and its pathwise analogue for regression.
    pub u_samples: Vec<f64>,
    pub u_estimate: Vec<f64>,
    pub u_stderr: Vec<f64>,
    /// Driver scenario (regression) or outer-sample (nested) index of each row.
    pub scenario_ids: Vec<usize>,
    pub excluded: usize,
    pub params: SchemeParams,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolutionSummary {
    pub u: Vec<f64>,
    pub stderr: Vec<f64>,
    pub engine: EngineTag,
    pub params: SchemeParams,
    pub seed: u64,
}

impl BackwardSolution {
    pub fn n_scenarios(&self) -> usize {
        self.scenario_ids.len()
    }

    pub fn levels(&self) -> usize {
        self.times.len() - 1
    }

    pub fn y_at(&self, scenario: usize, level: usize) -> &[f64] {
        let o = (scenario * (self.levels() + 1) + level) * self.k;
        &self.y[o..o + self.k]
    }

    pub fn y_stderr_at(&self, scenario: usize, level: usize) -> &[f64] {
        let o = (scenario * (self.levels() + 1) + level) * self.k;
        &self.y_stderr[o..o + self.k]
    }

    pub fn z_at(&self, scenario: usize, level: usize) -> &[f64] {
        let w = self.k * self.d;
        let o = (scenario * self.levels() + level) * w;
        &self.z[o..o + w]
    }

    pub fn summary(&self) -> SolutionSummary {
        SolutionSummary {
            u: self.u_estimate.clone(),
            stderr: self.u_stderr.clone(),
            engine: self.engine,
            params: self.params.clone(),
            seed: self.params.seed,
        }
    }

    /// `scenario,step,t,y_1..y_k,z_11..z_kd`; the terminal row leaves `z` empty.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let mut header = vec!["scenario".to_string(), "step".into(), "t".into()];
        header.extend((1..=self.k).map(|i| format!("y_{i}")));
        for i in 1..=self.k {
            header.extend((1..=self.d).map(|j| format!("z_{i}{j}")));
        }
        writeln!(w, "{}", header.join(","))?;
        let levels = self.levels();
        for s in 0..self.n_scenarios() {
            for i in 0..=levels {
                let mut row = vec![self.scenario_ids[s].to_string(), i.to_string(), format!("{:?}", self.times[i])];
                row.extend(self.y_at(s, i).iter().map(|v| format!("{v:?}")));
                if i < levels {
                    row.extend(self.z_at(s, i).iter().map(|v| format!("{v:?}")));
                } else {
                    row.extend(std::iter::repeat_n(String::new(), self.k * self.d));
                }
                writeln!(w, "{}", row.join(","))?;
            }
        }
        Ok(())
    }
}

/// Value with its Monte Carlo standard error, componentwise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: Vec<f64>,
    pub stderr: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegressionEngine {
    pub n_scenarios: usize,
    pub seed: u64,
    #[serde(flatten)]
    pub config: RegressionConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Engine {
    Regression(RegressionEngine),
    Nested(NestedConfig),
}

impl Engine {
    pub fn regression(n_scenarios: usize, seed: u64) -> Self {
        Engine::Regression(RegressionEngine { n_scenarios, seed, config: RegressionConfig::default() })
    }

    pub fn nested(steps: usize, branching: usize, outer_samples: usize, seed: u64) -> Self {
        Engine::Nested(NestedConfig { steps, branching, outer_samples, seed, ..NestedConfig::default() })
    }

    pub fn seed(&self) -> u64 {
        match self {
            Engine::Regression(r) => r.seed,
            Engine::Nested(n) => n.seed,
        }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        let mut e = self.clone();
        match &mut e {
            Engine::Regression(r) => r.seed = seed,
            Engine::Nested(n) => n.seed = seed,
        }
        e
    }
}

/// Runs the chosen engine from the initial path `p`.
pub fn solve(model: &Model, p: &Path, engine: &Engine) -> Result<BackwardSolution> {
    match engine {
        Engine::Regression(r) => {
            let drivers =
                crate::simulation::sample_drivers(p.grid(), r.n_scenarios, model.dims.d, model.dims.l, r.seed)?;
            solve_regression(model, p, &drivers, &r.config)
        }
        Engine::Nested(cfg) => solve_nested(model, p, cfg),
    }
}

/// `u(p)` averaged over the backward noise, or conditional on it when the
/// nested engine is given a frozen `B` path.
pub fn evaluate_u(model: &Model, p: &Path, engine: &Engine) -> Result<Estimate> {
    let sol = solve(model, p, engine)?;
    Ok(Estimate { value: sol.u_estimate, stderr: sol.u_stderr })
}

/// Standard error of the mean of paired differences when both solutions share
/// their scenarios, otherwise of the independent difference.
pub(crate) fn difference_stderr(a: &BackwardSolution, b: &BackwardSolution) -> Vec<f64> {
    let k = a.k;
    if a.scenario_ids != b.scenario_ids || a.n_scenarios() < 2 {
        return (0..k).map(|c| a.u_stderr[c].hypot(b.u_stderr[c])).collect();
    }
    (0..k)
        .map(|c| {
            let m: Moments = (0..a.n_scenarios()).map(|s| a.u_samples[s * k + c] - b.u_samples[s * k + c]).collect();
            m.stderr()
        })
        .collect()
}

/// `(u(p^{h e_i}) - u(p)) / h` with common random numbers.
pub fn difference_quotient(model: &Model, p: &Path, h: f64, direction: usize, engine: &Engine) -> Result<Estimate> {
    if h == 0.0 || !h.is_finite() {
        return Err(Error::Domain(format!("bump size must be finite and non-zero, got {h}")));
    }
    if direction >= p.dim() {
        return Err(Error::Domain(format!("direction {direction} out of range for d = {}", p.dim())));
    }
    let mut x = vec![0.0; p.dim()];
    x[direction] = h;
    let bumped = p.vertical_bump(&x)?;
    let base = solve(model, p, engine)?;
    let up = solve(model, &bumped, engine)?;
    let se = difference_stderr(&up, &base);
    Ok(Estimate {
        value: up.u_estimate.iter().zip(&base.u_estimate).map(|(a, b)| (a - b) / h).collect(),
        stderr: se.into_iter().map(|s| s / h.abs()).collect(),
    })
}

/// Tracks fixed-point update norms; two consecutive increases signal that the
/// implicit step is not contracting.
pub(crate) struct PicardMonitor {
    last: Option<f64>,
    growths: usize,
}

impl PicardMonitor {
    pub(crate) fn new() -> Self {
        PicardMonitor { last: None, growths: 0 }
    }

    pub(crate) fn update(&mut self, norm: f64, step: usize, alpha: f64) -> Result<()> {
        if !norm.is_finite() {
            return Err(Error::Contraction { step, alpha });
        }
        if let Some(prev) = self.last {
            if norm > prev && norm > 1e-14 {
                self.growths += 1;
                if self.growths >= 2 {
                    return Err(Error::Contraction { step, alpha });
                }
            } else {
                self.growths = 0;
            }
        }
        self.last = Some(norm);
        Ok(())
    }
}
