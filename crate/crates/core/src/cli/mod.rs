//! Command-line front end: `generate`, `train` and `verify`.
//!
//! Exit codes: 0 ok, 1 runtime failure, 2 config or usage error, 3 missing
//! input, 4 suite failure.

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Parser, Subcommand};
use thiserror::Error;

pub mod commands;
pub mod config;
pub mod suites;

pub use config::{ConfigError, ExperimentConfig, RawConfig};

/// Environment variable capping worker threads.
pub const THREADS_VAR: &str = "TREEOPO_THREADS";

const TRAIN_HELP: &str = "\
Outputs (under --out):
  metrics.csv            one row per step, averaged over problems
  metrics.jsonl          the same rows as line-delimited JSON
  metrics_<s>_<b>.csv    per sweep cell when structure or baseline lists a sweep
                         (with a matching .jsonl)
  policy.json            final policy table of every problem
  summary.json           final eval success and solver counters per run

CSV columns, in order:
  step, mean_reward, adv_variance, constraint_sat, grad_norm, eval_success";

#[derive(Debug, Parser)]
#[command(name = "tree-opo", version, about = "Staged advantage estimation on synthetic reasoning trees")]
pub struct Cli {
    /// key = value experiment file
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides train.seed and teacher.seed
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory (overrides paths.out)
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Suppress progress output
    #[arg(long, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the teacher search and write traces plus the prefix-tree dump
    Generate,
    /// Train on generated traces and write metrics
    #[command(after_help = TRAIN_HELP)]
    Train,
    /// Run a check suite: appendixC, projection, unbiasedness, mc-baseline, curriculum
    Verify { suite: String },
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Usage(String),
    #[error("missing input: {0}")]
    MissingInput(String),
    #[error("suite {0} failed")]
    SuiteFailed(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Run(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Usage(_) => 2,
            CliError::MissingInput(_) => 3,
            CliError::SuiteFailed(_) => 4,
            CliError::Io { .. } | CliError::Run(_) => 1,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn run(e: impl std::fmt::Display) -> Self {
        CliError::Run(e.to_string())
    }
}

/// Parses `args` (including the program name), runs the command and returns
/// the exit code. Reports go to `out`, diagnostics to `err`.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let sink: &mut dyn Write = if e.use_stderr() { err } else { out };
            let _ = write!(sink, "{}", e.render());
            return code;
        }
    };
    let pool = match thread_pool() {
        Ok(p) => p,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            return e.exit_code();
        }
    };
    let mut buffer = Vec::new();
    let result = pool.install(|| dispatch(&cli, &mut buffer));
    let _ = out.write_all(&buffer);
    match result {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

fn thread_pool() -> Result<rayon::ThreadPool, CliError> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var(THREADS_VAR) {
        let n: usize = v
            .trim()
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| CliError::Usage(format!("{THREADS_VAR} must be a positive integer, got {v:?}")))?;
        builder = builder.num_threads(n);
    }
    builder.build().map_err(CliError::run)
}

fn dispatch(cli: &Cli, out: &mut dyn Write) -> Result<(), CliError> {
    match &cli.command {
        Command::Generate => {
            let (raw, cfg) = load_config(cli)?;
            raw.require(&["teacher.rollouts"])?;
            commands::generate(&cfg, cli.quiet, out)
        }
        Command::Train => {
            let (raw, cfg) = load_config(cli)?;
            raw.require(&["train.steps"])?;
            commands::train(&cfg, cli.quiet, out)
        }
        Command::Verify { suite } => {
            let suite: suites::Suite = suite.parse().map_err(CliError::Usage)?;
            let report = suite.run();
            report.write(out, cli.quiet).map_err(|e| CliError::io("<stdout>", e))?;
            if report.passed() {
                Ok(())
            } else {
                Err(CliError::SuiteFailed(suite.to_string()))
            }
        }
    }
}

fn load_config(cli: &Cli) -> Result<(RawConfig, ExperimentConfig), CliError> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| CliError::Usage("--config is required".into()))?;
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::MissingInput(format!("config {}: {e}", path.display())))?;
    let raw = RawConfig::parse(&text)?;
    let mut cfg = ExperimentConfig::from_raw(&raw)?;
    cfg.override_with(cli.seed, cli.out.clone());
    Ok((raw, cfg))
}
