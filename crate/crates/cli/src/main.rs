//! `loomflow` experiment runner.
//!
//! Exit codes: 0 success, 1 configuration or usage error, 2 runtime failure
//! (a `FAILED` marker is left in the affected run directory).

mod commands;
mod config;
mod svg;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::commands::{plan_runs, run_all, Run, SampleArgs};
use crate::config::{ExperimentConfig, SampleSection};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

impl From<loomflow::Error> for CliError {
    fn from(e: loomflow::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

pub const OUT_ENV: &str = "LOOMFLOW_OUT";

#[derive(Parser, Debug)]
#[command(name = "loomflow", version, about = "Flow matching with persistent minibatch OT couplings")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Experiment config (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; falls back to the config's `out`, then $LOOMFLOW_OUT.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Run a single seed instead of the config's seed list.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Seeds run in parallel.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a model and write checkpoint, noise store and loss log.
    Train,
    /// Evaluate a checkpoint with every solver in `[eval]` and write a leaderboard.
    Eval {
        /// Defaults to `model.ckpt` in the run directory.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Run LOOM reassignments until stationary, without training.
    Converge,
    /// Run the built-in verification suite.
    Oracle,
    /// Integrate trajectories from a checkpoint and plot them.
    Sample {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        samples: Option<usize>,
        /// e.g. `midpoint:50` or `dopri5`.
        #[arg(long)]
        solver: Option<String>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn require_config(path: Option<&Path>) -> Result<ExperimentConfig, CliError> {
    let path = path.ok_or_else(|| CliError::Config("--config is required".into()))?;
    ExperimentConfig::load(path)
}

fn resolve_out(flag: Option<&Path>, cfg: Option<&ExperimentConfig>) -> Result<PathBuf, CliError> {
    flag.map(Path::to_path_buf)
        .or_else(|| cfg.and_then(|c| c.out.clone()))
        .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .ok_or_else(|| CliError::Config(format!("no output directory: pass --out, set `out` in the config or {OUT_ENV}")))
}

fn seeds(cli: &Cli, cfg: Option<&ExperimentConfig>) -> Vec<u64> {
    match (cli.seed, cfg) {
        (Some(s), _) => vec![s],
        (None, Some(c)) => c.seeds.clone(),
        (None, None) => vec![0],
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    if cli.jobs == 0 {
        return Err(CliError::Config("--jobs must be >= 1".into()));
    }
    if let Command::Oracle = cli.command {
        return oracle(&cli);
    }
    let cfg = match &cli.command {
        Command::Sample { .. } => cli.config.as_deref().map(ExperimentConfig::load).transpose()?,
        _ => Some(require_config(cli.config.as_deref())?),
    };
    let out = resolve_out(cli.out.as_deref(), cfg.as_ref())?;
    let runs = plan_runs(&out, &seeds(&cli, cfg.as_ref()));
    let results = match (&cli.command, &cfg) {
        (Command::Train, Some(cfg)) => run_all(&runs, cli.jobs, |r| commands::train(cfg, r)),
        (Command::Eval { checkpoint }, Some(cfg)) => run_all(&runs, cli.jobs, |r| commands::eval(cfg, checkpoint.as_deref(), r)),
        (Command::Converge, Some(cfg)) => run_all(&runs, cli.jobs, |r| commands::converge(cfg, r)),
        (Command::Sample { checkpoint, samples, solver }, cfg) => {
            let section = cfg.as_ref().map(|c| c.sample.clone()).unwrap_or_else(SampleSection::default);
            let args = SampleArgs { checkpoint: checkpoint.as_deref(), samples: *samples, solver: solver.as_deref() };
            run_all(&runs, cli.jobs, |r| commands::sample(&section, &args, r))
        }
        _ => unreachable!("config loaded for every command that needs one"),
    };
    report(&runs, results)
}

/// Prints one line per run and returns the most severe failure.
fn report(runs: &[Run], results: Vec<Result<String, CliError>>) -> Result<(), CliError> {
    let mut worst: Option<CliError> = None;
    for (run, result) in runs.iter().zip(results) {
        match result {
            Ok(msg) => println!("seed {}: {msg} ({})", run.seed, run.dir.display()),
            Err(e) => {
                if runs.len() > 1 {
                    eprintln!("seed {}: {e}", run.seed);
                }
                if worst.as_ref().is_none_or(|w| e.exit_code() > w.exit_code()) {
                    worst = Some(e);
                }
            }
        }
    }
    match worst {
        None => Ok(()),
        Some(e) if runs.len() == 1 => Err(e),
        Some(e) => Err(match e {
            CliError::Config(_) => CliError::Config("one or more runs failed".into()),
            CliError::Runtime(_) => CliError::Runtime("one or more runs failed".into()),
        }),
    }
}

fn oracle(cli: &Cli) -> Result<(), CliError> {
    let items = commands::oracle(cli.seed.unwrap_or(0));
    let mut text = String::new();
    for (name, pass, detail) in &items {
        text += &format!("{name}: {} {detail}\n", if *pass { "PASS" } else { "FAIL" });
    }
    print!("{text}");
    let out = cli.out.clone().or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from));
    if let Some(dir) = out {
        std::fs::create_dir_all(&dir)?;
        std::fs::write(dir.join("oracle.txt"), &text)?;
    }
    if items.iter().all(|(_, pass, _)| *pass) {
        Ok(())
    } else {
        Err(CliError::Runtime("verification suite failed".into()))
    }
}
