//! Experiment configuration, a JSON document.

use std::path::{Path as FsPath, PathBuf};

use pathfk::models::{registry_entry, CustomModelSpec, Model};
use pathfk::path_space::{Path, TimeGrid};
use pathfk::solver::{Engine, NestedConfig, RegressionBasis, RegressionConfig, RegressionEngine};
use pathfk::verification::ItoResidualKind;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ModelRef {
    Registry(String),
    Custom {
        custom: CustomModelSpec,
    },
    /// A model with constants added to `Φ` and `f`.
    Shifted {
        base: Box<ModelRef>,
        #[serde(default)]
        shift_terminal: f64,
        #[serde(default)]
        shift_driver: f64,
    },
}

impl ModelRef {
    pub fn build(&self) -> Result<Model> {
        match self {
            ModelRef::Registry(name) => registry_entry(name)
                .map(|e| e.model)
                .ok_or_else(|| CliError::Config(format!("unknown model {name:?}"))),
            ModelRef::Custom { custom } => Ok(custom.build()?),
            ModelRef::Shifted { base, shift_terminal, shift_driver } => {
                let m = base.build()?;
                Ok(m.to_builder().shift_terminal(*shift_terminal).shift_driver(*shift_driver).build()?)
            }
        }
    }

    pub fn registry_name(&self) -> Option<&str> {
        match self {
            ModelRef::Registry(name) => Some(name),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    #[serde(rename = "T")]
    pub horizon: f64,
    #[serde(rename = "N")]
    pub steps: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McConfig {
    pub n_scenarios: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum EngineConfig {
    Regression {
        #[serde(default)]
        basis: Option<RegressionBasis>,
        #[serde(default = "default_picard")]
        picard_iters: usize,
    },
    Nested {
        #[serde(default = "default_branching")]
        branching: usize,
        steps: usize,
        #[serde(default = "default_outer")]
        outer_samples: usize,
        #[serde(default = "default_picard")]
        picard_iters: usize,
    },
}

fn default_picard() -> usize {
    2
}
fn default_branching() -> usize {
    8
}
fn default_outer() -> usize {
    64
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig::Regression { basis: None, picard_iters: default_picard() }
    }
}

impl EngineConfig {
    pub fn regression_config(&self) -> RegressionConfig {
        match self {
            EngineConfig::Regression { basis, picard_iters } => {
                RegressionConfig { basis: basis.clone(), picard_iters: *picard_iters }
            }
            EngineConfig::Nested { picard_iters, .. } => RegressionConfig { picard_iters: *picard_iters, ..Default::default() },
        }
    }

    pub fn engine(&self, mc: &McConfig) -> Engine {
        match self {
            EngineConfig::Regression { .. } => Engine::Regression(RegressionEngine {
                n_scenarios: mc.n_scenarios,
                seed: mc.seed,
                config: self.regression_config(),
            }),
            EngineConfig::Nested { branching, steps, outer_samples, picard_iters } => Engine::Nested(NestedConfig {
                steps: *steps,
                branching: *branching,
                outer_samples: *outer_samples,
                seed: mc.seed,
                picard_iters: *picard_iters,
                frozen_b: None,
            }),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum InitialPath {
    /// Grid values from time 0 up to the current time.
    Values { values: Vec<Vec<f64>> },
    /// A constant path up to time `t`.
    Constant { constant: Vec<f64>, #[serde(default)] t: f64 },
    /// CSV file `time,x_1,...`, relative to the config file.
    File { file: PathBuf },
}

impl Default for InitialPath {
    fn default() -> Self {
        InitialPath::Constant { constant: vec![0.0], t: 0.0 }
    }
}

impl InitialPath {
    pub fn build(&self, grid: TimeGrid, base_dir: &FsPath) -> Result<Path> {
        Ok(match self {
            InitialPath::Values { values } => Path::new(grid, values.clone())?,
            InitialPath::Constant { constant, t } => Path::constant(grid, constant, *t)?,
            InitialPath::File { file } => {
                let full = base_dir.join(file);
                let f = std::fs::File::open(&full).map_err(|e| CliError::Config(format!("{}: {e}", full.display())))?;
                let p = Path::read_csv(std::io::BufReader::new(f), Some(grid.horizon()))?;
                if p.grid() != grid {
                    return Err(CliError::Config(format!("{}: path grid does not match the configured grid", full.display())));
                }
                p
            }
        })
    }
}

/// One requested check; required tolerances have no defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum CheckSpec {
    FeynmanKacForward {
        tolerance: f64,
        #[serde(default = "default_initials")]
        n_initials: usize,
        /// Initial times: the configured path restricted (or extended flat) to each.
        #[serde(default)]
        times: Option<Vec<f64>>,
    },
    FeynmanKacReverse {
        tolerance: f64,
        #[serde(default = "default_initials")]
        n_paths: usize,
        #[serde(default = "default_branching")]
        branching: usize,
        #[serde(default = "default_max_steps")]
        max_steps: usize,
        #[serde(default = "default_rel_bump")]
        rel_bump: f64,
    },
    SpdeResidual {
        tolerance: f64,
    },
    ZRepresentation {
        tolerance: f64,
        #[serde(default = "default_subsample")]
        subsample: usize,
        #[serde(default = "default_branching")]
        branching: usize,
        #[serde(default = "default_max_steps")]
        max_steps: usize,
    },
    ZGrowth {
        #[serde(default)]
        q: Option<f64>,
    },
    Flow {
        #[serde(default = "default_initials")]
        subsample: usize,
    },
    Comparison {
        model2: ModelRef,
        #[serde(default = "default_scheme_tolerance")]
        scheme_tolerance: f64,
        #[serde(default = "default_initials")]
        n_initials: usize,
    },
    Discretization {
        tolerance: f64,
        n_sequence: Vec<usize>,
    },
    MomentEnvelope {
        p: Vec<f64>,
        #[serde(default = "default_probes")]
        n_probes: usize,
        #[serde(default)]
        q: Option<f64>,
        /// Scenarios per probe; the library default when absent.
        #[serde(default)]
        n_scenarios: Option<usize>,
    },
    Regularity {
        p: Vec<f64>,
        #[serde(default = "default_probes")]
        n_pairs: usize,
        #[serde(default)]
        q: Option<f64>,
        #[serde(default)]
        n_scenarios: Option<usize>,
    },
    ItoResidual {
        kind: ItoResidualKind,
        steps: Vec<usize>,
        n_paths: usize,
    },
    EngineAgreement {
        #[serde(default = "default_branching")]
        branching: usize,
        steps: usize,
        #[serde(default = "default_outer")]
        outer_samples: usize,
    },
}

fn default_initials() -> usize {
    20
}
fn default_max_steps() -> usize {
    4
}
fn default_rel_bump() -> f64 {
    1e-3
}
fn default_subsample() -> usize {
    100
}
fn default_scheme_tolerance() -> f64 {
    1e-9
}
fn default_probes() -> usize {
    100
}

impl CheckSpec {
    pub fn name(&self) -> &'static str {
        match self {
            CheckSpec::FeynmanKacForward { .. } => "feynman_kac_forward",
            CheckSpec::FeynmanKacReverse { .. } => "feynman_kac_reverse",
            CheckSpec::SpdeResidual { .. } => "spde_residual",
            CheckSpec::ZRepresentation { .. } => "z_representation",
            CheckSpec::ZGrowth { .. } => "z_growth",
            CheckSpec::Flow { .. } => "flow",
            CheckSpec::Comparison { .. } => "comparison",
            CheckSpec::Discretization { .. } => "discretization",
            CheckSpec::MomentEnvelope { .. } => "moment_envelope",
            CheckSpec::Regularity { .. } => "regularity",
            CheckSpec::ItoResidual { .. } => "ito_residual",
            CheckSpec::EngineAgreement { .. } => "engine_agreement",
        }
    }

    fn tolerances(&self) -> Vec<f64> {
        match self {
            CheckSpec::FeynmanKacForward { tolerance, .. }
            | CheckSpec::FeynmanKacReverse { tolerance, .. }
            | CheckSpec::SpdeResidual { tolerance }
            | CheckSpec::ZRepresentation { tolerance, .. }
            | CheckSpec::Discretization { tolerance, .. } => vec![*tolerance],
            CheckSpec::Comparison { scheme_tolerance, .. } => vec![*scheme_tolerance],
            _ => vec![],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelRef,
    pub grid: GridConfig,
    pub mc: McConfig,
    #[serde(default)]
    pub engine: EngineConfig,
    #[serde(default)]
    pub initial_path: InitialPath,
    #[serde(default)]
    pub checks: Vec<CheckSpec>,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    /// Also write the backward solution and forward-path summaries.
    #[serde(default)]
    pub write_paths: bool,
    /// Probes for the structural model validation run before any solve.
    #[serde(default = "default_validation_probes")]
    pub validation_probes: usize,
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}
fn default_validation_probes() -> usize {
    200
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text).map_err(|e| CliError::Config(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(file: &FsPath) -> Result<(Self, String)> {
        let text = std::fs::read_to_string(file).map_err(|e| CliError::Config(format!("{}: {e}", file.display())))?;
        let cfg = Self::parse(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", file.display())),
            other => other,
        })?;
        Ok((cfg, text))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CliError::Config(m));
        if self.grid.steps < 2 {
            return bad(format!("grid.N must be at least 2, got {}", self.grid.steps));
        }
        if !(self.grid.horizon > 0.0) || !self.grid.horizon.is_finite() {
            return bad(format!("grid.T must be positive, got {}", self.grid.horizon));
        }
        if matches!(self.engine, EngineConfig::Regression { .. }) && self.mc.n_scenarios < 100 {
            return bad(format!("mc.n_scenarios must be at least 100 for the regression engine, got {}", self.mc.n_scenarios));
        }
        for (j, c) in self.checks.iter().enumerate() {
            for t in c.tolerances() {
                if !(t > 0.0) || !t.is_finite() {
                    return bad(format!("checks[{j}] ({}): tolerance must be positive, got {t}", c.name()));
                }
            }
        }
        Ok(())
    }

    pub fn grid(&self) -> Result<TimeGrid> {
        Ok(TimeGrid::new(self.grid.horizon, self.grid.steps)?)
    }
}
