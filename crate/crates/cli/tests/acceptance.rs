//! End-to-end acceptance criteria, driven through the experiment runner.
//! Prints one PASS/FAIL line per criterion and exits non-zero on any failure.

use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use pathfk_cli::{run, ExperimentConfig, RunOptions, Summary};

/// Runs `body` as an experiment into `dir/name`.
fn experiment(dir: &Path, name: &str, body: &str) -> Result<Summary, String> {
    let cfg = ExperimentConfig::parse(body).map_err(|e| format!("{name}: {e}"))?;
    let opts = RunOptions { output: Some(dir.join(name)), seed_override: None };
    run(&cfg, body, dir, &opts).map(|o| o.summary).map_err(|e| format!("{name}: {e}"))
}

/// Passes when every check of every experiment passed; the detail lists each statistic.
fn all_checks(dir: &Path, runs: &[(&str, String)]) -> Result<(bool, String), String> {
    let mut ok = true;
    let mut parts = Vec::new();
    for (name, body) in runs {
        let s = experiment(dir, name, body)?;
        for c in &s.checks {
            ok &= c.passed;
            parts.push(format!("{name}/{} {:.4e} <= {:.4e}", c.name, c.statistic, c.threshold));
        }
    }
    Ok((ok, parts.join("; ")))
}

fn closed_form_feynman_kac(dir: &Path) -> Result<(bool, String), String> {
    // A non-constant history up to t = 0.5, cut back to each initial time.
    let values = "[[0.5],[0.6],[0.3],[0.2],[0.4],[0.7],[0.9],[0.8],[0.5]]";
    let runs: Vec<(&str, String)> = ["heat", "asian"]
        .iter()
        .map(|m| {
            (*m, format!(
                r#"{{"model": "{m}", "grid": {{"T": 1, "N": 16}}, "mc": {{"n_scenarios": 10000, "seed": 12}},
                "initial_path": {{"values": {values}}},
                "checks": [{{"name": "feynman_kac_forward", "tolerance": 0.02, "times": [0, 0.25, 0.5]}}]}}"#
            ))
        })
        .collect();
    let mut out = all_checks(dir, &runs)?;
    for (name, _) in &runs {
        let v: serde_json::Value = serde_json::from_slice(&fs::read(dir.join(name).join("checks/feynman_kac_forward.json")).unwrap()).unwrap();
        out.1.push_str(&format!(
            "; {name} max rel {:.2e}, max z {:.2}",
            v["extras"]["max_relative_error"].as_f64().unwrap(),
            v["extras"]["max_z_score"].as_f64().unwrap()
        ));
    }
    Ok(out)
}

fn z_representation(dir: &Path) -> Result<(bool, String), String> {
    let runs: Vec<(&str, String)> = ["heat", "asian"]
        .iter()
        .map(|m| {
            (*m, format!(
                r#"{{"model": "{m}", "grid": {{"T": 1, "N": 16}}, "mc": {{"n_scenarios": 10000, "seed": 11}},
                "initial_path": {{"constant": [0.5]}},
                "checks": [{{"name": "z_representation", "tolerance": 0.05, "subsample": 100}}]}}"#
            ))
        })
        .collect();
    all_checks(dir, &runs)
}

fn engine_agreement(dir: &Path) -> Result<(bool, String), String> {
    let runs: Vec<(&str, String)> = ["heat", "asian", "linear-g", "nonlinear-f", "z-in-g"]
        .iter()
        .map(|m| {
            (*m, format!(
                r#"{{"model": "{m}", "grid": {{"T": 1, "N": 4}}, "mc": {{"n_scenarios": 10000, "seed": 7}},
                "initial_path": {{"constant": [1.0]}},
                "checks": [{{"name": "engine_agreement", "branching": 8, "steps": 4, "outer_samples": 64}}]}}"#
            ))
        })
        .collect();
    all_checks(dir, &runs)
}

fn flow(dir: &Path) -> Result<(bool, String), String> {
    let custom = r#"{"type": "regression", "basis": {"spec": {"custom": [{"kind": "endpoint", "component": 0}, {"kind": "sqrt_drawdown", "component": 0}]}, "degree": 4}}"#;
    let runs: Vec<(&str, String)> = [("heat", r#"{"type": "regression"}"#), ("asian", r#"{"type": "regression"}"#), ("path-f", custom)]
        .iter()
        .map(|(m, engine)| {
            (*m, format!(
                r#"{{"model": "{m}", "grid": {{"T": 1, "N": 16}}, "mc": {{"n_scenarios": 10000, "seed": 5}},
                "engine": {engine}, "initial_path": {{"constant": [0.3]}},
                "checks": [{{"name": "flow", "subsample": 20}}]}}"#
            ))
        })
        .collect();
    all_checks(dir, &runs)
}

fn comparison(dir: &Path) -> Result<(bool, String), String> {
    let runs = vec![
        ("terminal_shift", r#"{"model": {"base": "heat", "shift_terminal": 1.0}, "grid": {"T": 1, "N": 16}, "mc": {"n_scenarios": 2000, "seed": 1},
            "initial_path": {"constant": [0.4]},
            "checks": [{"name": "comparison", "model2": "heat", "n_initials": 20}]}"#
            .to_string()),
        ("driver_shift", r#"{"model": {"base": "asian", "shift_driver": 0.5}, "grid": {"T": 1, "N": 16}, "mc": {"n_scenarios": 2000, "seed": 1},
            "initial_path": {"constant": [0.4]},
            "checks": [{"name": "comparison", "model2": "asian", "n_initials": 20}]}"#
            .to_string()),
    ];
    all_checks(dir, &runs)
}

fn ito_residuals(dir: &Path) -> Result<(bool, String), String> {
    let runs: Vec<(&str, String)> = ["functional", "backward"]
        .iter()
        .map(|k| {
            (*k, format!(
                r#"{{"model": "heat", "grid": {{"T": 1, "N": 4}}, "mc": {{"n_scenarios": 200, "seed": 8}},
                "checks": [{{"name": "ito_residual", "kind": "{k}", "steps": [64, 128, 256], "n_paths": 4000}}]}}"#
            ))
        })
        .collect();
    let mut out = all_checks(dir, &runs)?;
    for (name, _) in &runs {
        let v: serde_json::Value = serde_json::from_slice(&fs::read(dir.join(name).join("checks/ito_residual.json")).unwrap()).unwrap();
        out.1.push_str(&format!("; {name} rate {:.3}", v["extras"]["rate"].as_f64().unwrap()));
    }
    Ok(out)
}

fn envelopes(dir: &Path) -> Result<(bool, String), String> {
    let runs: Vec<(&str, String)> = ["heat", "asian", "path-f"]
        .iter()
        .map(|m| {
            (*m, format!(
                r#"{{"model": "{m}", "grid": {{"T": 1, "N": 16}}, "mc": {{"n_scenarios": 2000, "seed": 6}},
                "checks": [{{"name": "moment_envelope", "p": [2, 4], "n_probes": 100}},
                           {{"name": "regularity", "p": [2, 4], "n_pairs": 100}}]}}"#
            ))
        })
        .collect();
    all_checks(dir, &runs)
}

fn discretization(dir: &Path) -> Result<(bool, String), String> {
    let runs: Vec<(&str, String)> = [("path-f", "1e-6"), ("heat", "1e-9")]
        .iter()
        .map(|(m, tol)| {
            (*m, format!(
                r#"{{"model": "{m}", "grid": {{"T": 1, "N": 16}}, "mc": {{"n_scenarios": 10000, "seed": 3}},
                "initial_path": {{"constant": [0.2]}},
                "checks": [{{"name": "discretization", "tolerance": {tol}, "n_sequence": [2, 4, 8, 16]}}]}}"#
            ))
        })
        .collect();
    all_checks(dir, &runs)
}

fn determinism(dir: &Path) -> Result<(bool, String), String> {
    let body = r#"{"model": "path-f", "grid": {"T": 1, "N": 8}, "mc": {"n_scenarios": 3000, "seed": 21},
        "initial_path": {"constant": [0.1]},
        "checks": [{"name": "z_growth"}, {"name": "flow", "subsample": 5}, {"name": "discretization", "tolerance": 1.0, "n_sequence": [2, 4, 8]}]}"#;
    let cfg = dir.join("determinism.json");
    fs::write(&cfg, body).map_err(|e| e.to_string())?;
    let mut summaries = Vec::new();
    for (j, workers) in ["1", "3", "8", "8"].iter().enumerate() {
        let out = dir.join(format!("determinism_{j}"));
        let status = Command::new(env!("CARGO_BIN_EXE_pathfk"))
            .env_remove("PATHFK_SEED")
            .args(["--workers", workers, "run"])
            .arg(&cfg)
            .arg("--output")
            .arg(&out)
            .output()
            .map_err(|e| e.to_string())?;
        if status.status.code() != Some(0) {
            return Err(format!("run with {workers} workers: {}", String::from_utf8_lossy(&status.stderr)));
        }
        summaries.push(fs::read(out.join("summary.json")).map_err(|e| e.to_string())?);
    }
    let same = summaries.windows(2).all(|w| w[0] == w[1]);
    Ok((same, format!("{} runs over workers 1, 3, 8, 8; summary.json byte-identical: {same}", summaries.len())))
}

type Criterion = fn(&Path) -> Result<(bool, String), String>;

fn main() {
    let criteria: [(&str, Criterion); 9] = [
        ("closed-form Feynman-Kac on heat and asian", closed_form_feynman_kac),
        ("Z representation on heat and asian", z_representation),
        ("regression and nested engines agree on five models", engine_agreement),
        ("flow property on heat, asian and path-f", flow),
        ("comparison under terminal and driver shifts", comparison),
        ("functional and backward Ito residual convergence", ito_residuals),
        ("moment and regularity envelopes", envelopes),
        ("discretization convergence on path-f and heat", discretization),
        ("determinism across reruns and worker counts", determinism),
    ];
    let root = tempfile::tempdir().expect("temp dir");
    let mut failed = 0;
    for (j, (label, f)) in criteria.iter().enumerate() {
        let dir = root.path().join(format!("c{}", j + 1));
        fs::create_dir_all(&dir).expect("criterion dir");
        let start = Instant::now();
        let (ok, detail) = f(&dir).unwrap_or_else(|e| (false, format!("error: {e}")));
        if !ok {
            failed += 1;
        }
        println!(
            "criterion {}: {} {label} ({:.1}s) {detail}",
            j + 1,
            if ok { "PASS" } else { "FAIL" },
            start.elapsed().as_secs_f64()
        );
    }
    println!("acceptance: {} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
