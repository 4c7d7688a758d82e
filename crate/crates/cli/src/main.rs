use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use pathfk_cli::{run, sweep, CliError, ExperimentConfig, RunOptions, EXIT_CHECK_FAILED, EXIT_ERROR, EXIT_OK};

#[derive(Parser)]
#[command(name = "pathfk", version, about = "Run path-dependent BDSDE experiments")]
struct Cli {
    /// Worker threads; results do not depend on it.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Output directory, overriding `output_dir` in the config.
    #[arg(long, global = true)]
    output: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve and run the configured checks.
    Run { config: PathBuf },
    /// Re-run the config over values of one parameter.
    Sweep {
        config: PathBuf,
        /// One of N, T, seed, n_scenarios.
        #[arg(long)]
        axis: String,
        /// Comma-separated values; may be empty.
        #[arg(long, default_value = "", allow_hyphen_values = true)]
        values: String,
    },
}

fn seed_from_env() -> Result<Option<u64>, CliError> {
    match std::env::var("PATHFK_SEED") {
        Ok(s) if !s.trim().is_empty() => {
            s.trim().parse().map(Some).map_err(|e| CliError::Config(format!("PATHFK_SEED={s:?}: {e}")))
        }
        _ => Ok(None),
    }
}

fn base_dir(config: &Path) -> PathBuf {
    config.parent().map(Path::to_path_buf).unwrap_or_default()
}

fn execute(cli: Cli) -> Result<i32, CliError> {
    if let Some(n) = cli.workers {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(format!("--workers {n}: {e}")))?;
    }
    let opts = RunOptions { output: cli.output, seed_override: seed_from_env()? };
    match cli.command {
        Command::Run { config } => {
            let (cfg, text) = ExperimentConfig::load(&config)?;
            let outcome = run(&cfg, &text, &base_dir(&config), &opts)?;
            for c in &outcome.summary.checks {
                println!("{:<24} {} statistic {:e} threshold {:e}", c.name, if c.passed { "PASS" } else { "FAIL" }, c.statistic, c.threshold);
            }
            println!("u = {:?} (stderr {:?})", outcome.summary.solution.u, outcome.summary.solution.stderr);
            println!("artifacts in {}", outcome.output_dir.display());
            Ok(outcome.exit_code())
        }
        Command::Sweep { config, axis, values } => {
            let values: Vec<String> = values.split(',').map(str::trim).filter(|v| !v.is_empty()).map(String::from).collect();
            let (cfg, text) = ExperimentConfig::load(&config)?;
            let (rows, passed) = sweep(&cfg, &text, &base_dir(&config), &axis, &values, &opts)?;
            for r in &rows {
                println!("{}={} {:<24} statistic {:e}", r.axis, r.value, r.check, r.statistic);
            }
            Ok(if passed { EXIT_OK } else { EXIT_CHECK_FAILED })
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let code = execute(cli).unwrap_or_else(|e| {
        eprintln!("error: {e}");
        EXIT_ERROR
    });
    ExitCode::from(code as u8)
}
