use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use rca_core::config::Config;
use rca_core::planner::RunMode;
use rca_core::workspace::{diff_texts, FileRole, Workspace};

mod eval;
mod run;

/// Exit code for a failed run, evaluation or validation.
const EXIT_FAILURE: u8 = 1;
/// Exit code for bad flags, config or inputs that were never usable.
const EXIT_USAGE: u8 = 2;

#[derive(Parser)]
#[command(name = "rca", version, about = "Edit starter code into a methodology implementation with a planner/worker agent")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check that a workspace has every mandatory file and a readable baseline.
    Validate { workspace: PathBuf },
    /// Run the agent, the prescribed path or the single-call baseline.
    Run(RunArgs),
    /// Score finished runs and print the outcome, quality and efficiency tables.
    Eval(EvalArgs),
    /// Unified diff of two files; exits 1 when they differ.
    Diff { file_a: PathBuf, file_b: PathBuf },
}

#[derive(Args)]
pub struct RunArgs {
    pub workspace: PathBuf,
    #[arg(long, default_value = "agent")]
    pub mode: RunMode,
    #[arg(long, env = "RCA_CONFIG")]
    pub config: Option<PathBuf>,
    /// Cassette to replay, or where to copy the recording.
    #[arg(long)]
    pub cassette: Option<PathBuf>,
    #[arg(long, conflicts_with = "replay")]
    pub record: bool,
    #[arg(long, requires = "cassette")]
    pub replay: bool,
    #[arg(long)]
    pub max_steps: Option<usize>,
    #[arg(long, default_value = "runs")]
    pub runs_dir: PathBuf,
}

#[derive(Args)]
pub struct EvalArgs {
    pub runs_dir: PathBuf,
    /// CSV with run_id, manual_score, lines_repaired, reviewer_id.
    #[arg(long)]
    pub scores: Option<PathBuf>,
    /// Directory for metrics.txt, runs.csv and groups.csv.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, env = "RCA_CONFIG")]
    pub config: Option<PathBuf>,
}

/// An error with the exit code it maps to.
#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl std::fmt::Display) -> Self {
        Self {
            code: EXIT_USAGE,
            message: message.to_string(),
        }
    }

    pub fn failure(message: impl std::fmt::Display) -> Self {
        Self {
            code: EXIT_FAILURE,
            message: message.to_string(),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

pub fn load_config(path: Option<&Path>) -> CliResult<(Config, String)> {
    match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| CliError::usage(format!("cannot read config {}: {e}", p.display())))?;
            let config = Config::parse(&text).map_err(CliError::usage)?;
            Ok((config, text))
        }
        None => Ok((Config::default(), String::new())),
    }
}

fn validate(workspace: &Path) -> CliResult<u8> {
    let ws = Workspace::open(workspace).map_err(|e| CliError::failure(format!("invalid workspace: {e}")))?;
    let baseline = ws
        .read_baseline_performance()
        .map_err(|e| CliError::failure(format!("invalid workspace: {e}")))?;
    println!("workspace `{}` is valid", ws.task());
    for role in FileRole::MANDATORY {
        println!("  {role}: {}", ws.path_for(role));
    }
    let subparts = ws.files_with_role(FileRole::Subpart).count();
    let supplementary = ws.files_with_role(FileRole::Supplementary).count();
    println!("  subpart scripts: {subparts}, supplementary files: {supplementary}");
    println!("  baseline performance: {} ({})", baseline.value, ws.perf_direction());
    Ok(0)
}

fn diff(a: &Path, b: &Path) -> CliResult<u8> {
    let read = |p: &Path| {
        std::fs::read_to_string(p).map_err(|e| CliError::usage(format!("cannot read {}: {e}", p.display())))
    };
    let (ta, tb) = (read(a)?, read(b)?);
    let d = diff_texts(&a.display().to_string(), &b.display().to_string(), &ta, &tb);
    if d.is_empty() {
        return Ok(0);
    }
    print!("{}", d.unified);
    Ok(EXIT_FAILURE)
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_env("RCA_LOG").unwrap_or_else(|_| "warn".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Validate { workspace } => validate(&workspace),
        Command::Run(args) => run::cmd_run(&args),
        Command::Eval(args) => eval::cmd_eval(&args),
        Command::Diff { file_a, file_b } => diff(&file_a, &file_b),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}
