//! Executes an experiment and writes its artifacts.

use std::collections::BTreeMap;
use std::fs;
use std::io::BufWriter;
use std::path::{Path as FsPath, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use log::info;
use pathfk::functional::{FiniteDifference, SmoothFunctional};
use pathfk::models::{registry_entry, validate, Model};
use pathfk::path_space::{Path, TimeGrid};
use pathfk::rng::derive_seed;
use pathfk::simulation::{sample_drivers, simulate_forward, write_summary_csv, BrownianPair, ScenarioEnsemble};
use pathfk::solver::{evaluate_u, solve, solve_regression_on, BackwardSolution, Engine, NestedConfig, SolutionSummary};
use pathfk::verification::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::{CheckSpec, ExperimentConfig, GridConfig};
use crate::error::{CliError, Result};

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_CHECK_FAILED: i32 = 2;

/// Paths simulated for the SPDE residual when `u` has no closed form.
const NESTED_RESIDUAL_PATHS: usize = 20;

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    /// Replaces `output_dir` from the config.
    pub output: Option<PathBuf>,
    pub seed_override: Option<u64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct CheckSummary {
    pub name: String,
    pub statistic: f64,
    pub threshold: f64,
    pub passed: bool,
    pub n_samples: usize,
    pub extras: BTreeMap<String, f64>,
}

/// Contents of `summary.json`: a pure function of the config and the seed.
#[derive(Clone, Debug, Serialize)]
pub struct Summary {
    pub model: String,
    pub grid: GridConfig,
    pub seed: u64,
    pub initial_time: f64,
    pub solution: SolutionSummary,
    pub checks: Vec<CheckSummary>,
    pub passed: bool,
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub summary: Summary,
    pub all_passed: bool,
    pub output_dir: PathBuf,
}

impl RunOutcome {
    pub fn exit_code(&self) -> i32 {
        if self.all_passed {
            EXIT_OK
        } else {
            EXIT_CHECK_FAILED
        }
    }
}

#[derive(Serialize)]
struct Manifest {
    version: &'static str,
    config_sha256: String,
    seed: u64,
    seed_override: Option<u64>,
    workers: usize,
    timestamp_unix: u64,
    files: BTreeMap<String, String>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Regression solve from the configured initial path, kept with its forward
/// paths and drivers for the checks that inspect them.
struct RegressionRun {
    ensemble: ScenarioEnsemble,
    solution: BackwardSolution,
}

fn regression_run(model: &Model, initial: &Path, cfg: &ExperimentConfig) -> Result<RegressionRun> {
    let drivers = drivers_for(model, initial.grid(), cfg.mc.n_scenarios, cfg.mc.seed)?;
    let ensemble = simulate_forward(model, initial, &drivers)?;
    let solution = solve_regression_on(model, &ensemble, &drivers, &cfg.engine.regression_config())?;
    Ok(RegressionRun { ensemble, solution })
}

fn drivers_for(model: &Model, grid: TimeGrid, n: usize, seed: u64) -> Result<BrownianPair> {
    Ok(sample_drivers(grid, n, model.dims.d, model.dims.l, seed)?)
}

/// The configured path cut back, or extended flat, to grid time `t`.
fn path_at(initial: &Path, t: f64) -> Result<Path> {
    let idx = initial.grid().index_of(t)?;
    Ok(if idx <= initial.current_index() { initial.restrict_to_index(idx) } else { initial.extend_flat_to_index(idx) })
}

struct Context<'a> {
    cfg: &'a ExperimentConfig,
    model: &'a Model,
    grid: TimeGrid,
    initial: &'a Path,
    engine: Engine,
    main: Option<RegressionRun>,
}

impl Context<'_> {
    fn seed(&self) -> u64 {
        self.cfg.mc.seed
    }

    fn n(&self) -> usize {
        self.cfg.mc.n_scenarios
    }

    fn closed_form(&self) -> Option<pathfk::models::ModelRegistryEntry> {
        self.cfg.model.registry_name().and_then(registry_entry)
    }

    fn regression(&mut self) -> Result<&RegressionRun> {
        if self.main.is_none() {
            self.main = Some(regression_run(self.model, self.initial, self.cfg)?);
        }
        Ok(self.main.as_ref().expect("regression run"))
    }

    fn dispatch(&mut self, spec: &CheckSpec) -> Result<CheckReport> {
        let (seed, n) = (self.seed(), self.n());
        let regression = self.cfg.engine.regression_config();
        match spec {
            CheckSpec::FeynmanKacForward { tolerance, n_initials, times } => {
                let u = self
                    .closed_form()
                    .and_then(|e| e.closed_form_u)
                    .ok_or_else(|| CliError::Config(format!("feynman_kac_forward needs a closed-form model, got {}", self.model.name)))?;
                let initials = match times {
                    Some(ts) => ts.iter().map(|&t| path_at(self.initial, t)).collect::<Result<Vec<_>>>()?,
                    None => random_initial_paths(self.grid, self.model.dims.d, *n_initials, 0.5, 2.0, derive_seed(seed, 0xF0))?,
                };
                Ok(feynman_kac_forward_check(self.model, u.as_ref(), &initials, &self.engine, *tolerance)?)
            }
            CheckSpec::FeynmanKacReverse { tolerance, n_paths, branching, max_steps, rel_bump } => {
                let rc = ReverseConfig {
                    n_paths: *n_paths,
                    seed,
                    branching: *branching,
                    max_steps: *max_steps,
                    tolerance: *tolerance,
                    rel_bump: *rel_bump,
                };
                Ok(feynman_kac_reverse_check(self.model, self.initial, &rc)?)
            }
            CheckSpec::SpdeResidual { tolerance } => {
                let closed = self.closed_form().and_then(|e| e.closed_form_u);
                match closed {
                    Some(u) => {
                        let drivers = drivers_for(self.model, self.grid, n, seed)?;
                        Ok(spde_residual(self.model, u.as_ref(), self.initial, &drivers, *tolerance)?)
                    }
                    None if self.model.noise_free => {
                        let u = FiniteDifference::new(SolverFunctional::nested(self.model, 8, 4));
                        let drivers = drivers_for(self.model, self.grid, NESTED_RESIDUAL_PATHS, seed)?;
                        let u: &dyn SmoothFunctional = &u;
                        Ok(spde_residual(self.model, u, self.initial, &drivers, *tolerance)?)
                    }
                    None => Err(CliError::Config(format!(
                        "spde_residual needs a closed-form u or g = 0, model {} has neither",
                        self.model.name
                    ))),
                }
            }
            CheckSpec::ZRepresentation { tolerance, subsample, branching, max_steps } => {
                let mut zc = ZCheckConfig::new(n, seed, *tolerance);
                zc.subsample = *subsample;
                zc.branching = *branching;
                zc.max_steps = *max_steps;
                zc.regression = regression;
                Ok(z_representation_check(self.model, self.initial, &zc)?)
            }
            CheckSpec::ZGrowth { q } => {
                let model = self.model;
                let run = self.regression()?;
                Ok(z_growth_check(model, &run.ensemble, &run.solution, *q)?)
            }
            CheckSpec::Flow { subsample } => {
                let mut fc = FlowConfig::new(n, seed);
                fc.subsample = *subsample;
                fc.regression = regression;
                Ok(flow_check(self.model, self.initial, &fc)?)
            }
            CheckSpec::Comparison { model2, scheme_tolerance, n_initials } => {
                let m2 = model2.build()?;
                let mut cc = ComparisonConfig::new(n, seed);
                cc.scheme_tolerance = *scheme_tolerance;
                cc.n_initials = *n_initials;
                cc.regression = regression;
                Ok(comparison_check(self.model, &m2, self.initial, &cc)?)
            }
            CheckSpec::Discretization { tolerance, n_sequence } => {
                let mut dc = DiscretizationConfig::new(n, seed, n_sequence.clone(), *tolerance);
                dc.regression = regression;
                Ok(discretization_convergence_check(self.model, self.initial, &dc)?)
            }
            CheckSpec::MomentEnvelope { p, n_probes, q, n_scenarios } => {
                let mut ec = EnvelopeConfig::new(seed);
                ec.p = p.clone();
                ec.n_probes = *n_probes;
                ec.q = *q;
                if let Some(m) = n_scenarios {
                    ec.n_scenarios = *m;
                }
                ec.regression = regression;
                Ok(moment_envelope_check(self.model, self.grid, &ec)?)
            }
            CheckSpec::Regularity { p, n_pairs, q, n_scenarios } => {
                let mut rc = RegularityConfig::new(seed);
                rc.p = p.clone();
                rc.n_pairs = *n_pairs;
                rc.q = *q;
                if let Some(m) = n_scenarios {
                    rc.n_scenarios = *m;
                }
                rc.regression = regression;
                Ok(regularity_check(self.model, self.grid, &rc)?)
            }
            CheckSpec::ItoResidual { kind, steps, n_paths } => Ok(ito_residual_convergence(*kind, steps, *n_paths, seed)?),
            CheckSpec::EngineAgreement { branching, steps, outer_samples } => {
                let mut reg = Engine::regression(n, seed);
                if let Engine::Regression(r) = &mut reg {
                    r.config = regression;
                }
                let nested = Engine::Nested(NestedConfig {
                    steps: *steps,
                    branching: *branching,
                    outer_samples: *outer_samples,
                    seed: derive_seed(seed, 0xA6),
                    ..NestedConfig::default()
                });
                Ok(engine_agreement(self.model, self.initial, &reg, &nested)?)
            }
        }
    }
}

/// `|u_reg - u_nested| / (3 (se_reg + se_nested))` per component; passes at most 1.
fn engine_agreement(model: &Model, initial: &Path, reg: &Engine, nested: &Engine) -> Result<CheckReport> {
    let a = evaluate_u(model, initial, reg)?;
    let b = evaluate_u(model, initial, nested)?;
    let mut details = Vec::new();
    let mut score: f64 = 0.0;
    let mut max_gap: f64 = 0.0;
    for c in 0..a.value.len() {
        let gap = (a.value[c] - b.value[c]).abs();
        let se = a.stderr[c] + b.stderr[c];
        let s = if se > 0.0 { gap / (3.0 * se) } else if gap <= 1e-12 * (1.0 + b.value[c].abs()) { 0.0 } else { f64::INFINITY };
        score = score.max(s);
        max_gap = max_gap.max(gap);
        details.push(pathfk::verification::SampleDetail::new(format!("comp{c}"), gap, b.value[c], 3.0 * se));
    }
    let mut r = CheckReport::new("engine_agreement", score, 1.0, a.value.len(), details).with_extra("max_gap", max_gap);
    for c in 0..a.value.len() {
        r = r
            .with_extra(&format!("u_regression_{c}"), a.value[c])
            .with_extra(&format!("u_nested_{c}"), b.value[c])
            .with_extra(&format!("stderr_regression_{c}"), a.stderr[c])
            .with_extra(&format!("stderr_nested_{c}"), b.stderr[c]);
    }
    Ok(r)
}

fn write_json<T: Serialize>(path: &FsPath, value: &T) -> Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    fs::write(path, &bytes)?;
    Ok(bytes)
}

fn record(files: &mut BTreeMap<String, String>, root: &FsPath, path: &FsPath) -> Result<()> {
    let bytes = fs::read(path)?;
    let rel = path.strip_prefix(root).unwrap_or(path).to_string_lossy().replace('\\', "/");
    files.insert(rel, sha256_hex(&bytes));
    Ok(())
}

/// Runs one experiment. `text` is the raw config (hashed into the manifest)
/// and `base_dir` resolves relative input files.
pub fn run(cfg: &ExperimentConfig, text: &str, base_dir: &FsPath, opts: &RunOptions) -> Result<RunOutcome> {
    let mut cfg = cfg.clone();
    if let Some(s) = opts.seed_override {
        cfg.mc.seed = s;
    }
    cfg.validate()?;
    let grid = cfg.grid()?;
    let model = cfg.model.build()?;
    let report = validate(&model, grid, cfg.validation_probes, cfg.mc.seed)?;
    if !report.passed() {
        let msgs: Vec<String> = report
            .failures()
            .iter()
            .map(|f| format!("{} (worst ratio {:e}{})", f.name, f.worst_ratio, f.witness.as_ref().map(|w| format!(", {w}")).unwrap_or_default()))
            .collect();
        return Err(CliError::Validation(format!("{}: {}", model.name, msgs.join("; "))));
    }
    let initial = cfg.initial_path.build(grid, base_dir)?;
    if initial.dim() != model.dims.d {
        return Err(CliError::Config(format!("initial path has dimension {}, model needs {}", initial.dim(), model.dims.d)));
    }
    let engine = cfg.engine.engine(&cfg.mc);

    let (solution, main) = match &engine {
        Engine::Regression(_) => {
            let run = regression_run(&model, &initial, &cfg)?;
            (run.solution.clone(), Some(run))
        }
        Engine::Nested(_) => (solve(&model, &initial, &engine)?, None),
    };
    info!("{}: u = {:?} +- {:?}", model.name, solution.u_estimate, solution.u_stderr);

    let out = opts.output.clone().unwrap_or_else(|| cfg.output_dir.clone());
    let checks_dir = out.join("checks");
    fs::create_dir_all(&checks_dir)?;

    let mut ctx = Context { cfg: &cfg, model: &model, grid, initial: &initial, engine: engine.clone(), main };
    let mut summaries = Vec::with_capacity(cfg.checks.len());
    let mut seen: BTreeMap<&str, usize> = BTreeMap::new();
    let mut files = BTreeMap::new();
    for spec in &cfg.checks {
        let base = spec.name();
        let count = seen.entry(base).or_insert(0);
        *count += 1;
        let stem = if *count == 1 { base.to_string() } else { format!("{base}_{count}") };
        info!("check {stem}");
        let r = ctx.dispatch(spec)?;
        info!("{stem}: statistic {:e} threshold {:e} passed {}", r.statistic, r.threshold, r.passed);
        let json = checks_dir.join(format!("{stem}.json"));
        r.write_json(BufWriter::new(fs::File::create(&json)?))?;
        let csv = checks_dir.join(format!("{stem}.csv"));
        r.write_csv(BufWriter::new(fs::File::create(&csv)?))?;
        record(&mut files, &out, &json)?;
        record(&mut files, &out, &csv)?;
        summaries.push(CheckSummary {
            name: stem,
            statistic: r.statistic,
            threshold: r.threshold,
            passed: r.passed,
            n_samples: r.n_samples,
            extras: r.extras,
        });
    }

    if cfg.write_paths {
        let dir = out.join("paths");
        fs::create_dir_all(&dir)?;
        let p = dir.join("initial.csv");
        initial.write_csv(BufWriter::new(fs::File::create(&p)?))?;
        record(&mut files, &out, &p)?;
        let p = dir.join("solution.csv");
        solution.write_csv(BufWriter::new(fs::File::create(&p)?))?;
        record(&mut files, &out, &p)?;
        if let Some(run) = &ctx.main {
            let p = dir.join("forward_summary.csv");
            write_summary_csv(BufWriter::new(fs::File::create(&p)?), &run.ensemble)?;
            record(&mut files, &out, &p)?;
        }
    }

    let all_passed = summaries.iter().all(|c| c.passed);
    let summary = Summary {
        model: model.name.clone(),
        grid: cfg.grid,
        seed: cfg.mc.seed,
        initial_time: initial.current_time(),
        solution: solution.summary(),
        checks: summaries,
        passed: all_passed,
    };
    let bytes = write_json(&out.join("summary.json"), &summary)?;
    files.insert("summary.json".into(), sha256_hex(&bytes));
    let manifest = Manifest {
        version: env!("CARGO_PKG_VERSION"),
        config_sha256: sha256_hex(text.as_bytes()),
        seed: cfg.mc.seed,
        seed_override: opts.seed_override,
        workers: rayon::current_num_threads(),
        timestamp_unix: SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
        files,
    };
    write_json(&out.join("manifest.json"), &manifest)?;
    Ok(RunOutcome { summary, all_passed, output_dir: out })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub axis: String,
    pub value: String,
    pub check: String,
    pub statistic: f64,
    pub passed: bool,
}

pub const SWEEP_AXES: [&str; 4] = ["N", "T", "seed", "n_scenarios"];

fn apply_axis(cfg: &mut ExperimentConfig, axis: &str, value: &str) -> Result<()> {
    let bad = |e: &dyn std::fmt::Display| CliError::Config(format!("sweep value {value:?} for axis {axis}: {e}"));
    match axis {
        "N" => cfg.grid.steps = value.parse().map_err(|e| bad(&e))?,
        "T" => cfg.grid.horizon = value.parse().map_err(|e| bad(&e))?,
        "seed" => cfg.mc.seed = value.parse().map_err(|e| bad(&e))?,
        "n_scenarios" => cfg.mc.n_scenarios = value.parse().map_err(|e| bad(&e))?,
        _ => return Err(CliError::Config(format!("unknown sweep axis {axis:?}, expected one of {SWEEP_AXES:?}"))),
    }
    Ok(())
}

/// Runs the experiment once per value of `axis`, each into
/// `<output>/<axis>=<value>/`, and writes `<output>/sweep.csv` with columns
/// `axis,value,check,statistic`. An empty value list does nothing.
pub fn sweep(cfg: &ExperimentConfig, text: &str, base_dir: &FsPath, axis: &str, values: &[String], opts: &RunOptions) -> Result<(Vec<SweepRow>, bool)> {
    if !SWEEP_AXES.contains(&axis) {
        return Err(CliError::Config(format!("unknown sweep axis {axis:?}, expected one of {SWEEP_AXES:?}")));
    }
    if values.is_empty() {
        return Ok((Vec::new(), true));
    }
    let out = opts.output.clone().unwrap_or_else(|| cfg.output_dir.clone());
    let mut rows = Vec::new();
    let mut all_passed = true;
    for v in values {
        let mut c = cfg.clone();
        apply_axis(&mut c, axis, v)?;
        let mut o = opts.clone();
        o.output = Some(out.join(format!("{axis}={v}")));
        if axis == "seed" {
            o.seed_override = None;
        }
        let outcome = run(&c, text, base_dir, &o)?;
        all_passed &= outcome.all_passed;
        for ch in outcome.summary.checks {
            rows.push(SweepRow { axis: axis.into(), value: v.clone(), check: ch.name, statistic: ch.statistic, passed: ch.passed });
        }
    }
    fs::create_dir_all(&out)?;
    let mut csv = String::from("axis,value,check,statistic\n");
    for r in &rows {
        csv.push_str(&format!("{},{},{},{:?}\n", r.axis, r.value, r.check, r.statistic));
    }
    fs::write(out.join("sweep.csv"), csv)?;
    Ok((rows, all_passed))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hex_digest_and_axes() {
        assert_eq!(sha256_hex(b"abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
        let mut cfg = ExperimentConfig::parse(r#"{"model":"heat","grid":{"T":1,"N":4},"mc":{"n_scenarios":200,"seed":1}}"#).unwrap();
        apply_axis(&mut cfg, "N", "8").unwrap();
        apply_axis(&mut cfg, "T", "0.5").unwrap();
        assert_eq!((cfg.grid.steps, cfg.grid.horizon), (8, 0.5));
        assert!(apply_axis(&mut cfg, "sigma", "1").is_err());
        assert!(apply_axis(&mut cfg, "N", "x").is_err());
    }

    #[test]
    fn path_at_cuts_and_extends() {
        let g = TimeGrid::new(1.0, 4).unwrap();
        let p = Path::scalar(g, &[0.0, 1.0, 2.0]).unwrap();
        assert_eq!(path_at(&p, 0.25).unwrap().endpoint(), [1.0]);
        let e = path_at(&p, 1.0).unwrap();
        assert_eq!((e.current_index(), e.endpoint()[0]), (4, 2.0));
    }
}
