mod commands;
mod rundir;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "sambg", version, about = "Structure-aware brain graph representation learning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Experiment config JSON; defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output (run) directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Seed override.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic planted-motif cohort as a manifest plus CSVs.
    Synth(Common),
    /// Validate a dataset manifest and report per-subject diagnostics.
    Ingest(Common),
    /// Supervised masker and encoder pre-training on one (seed, fold).
    Pretrain(RunArgs),
    /// Self-supervised training on one (seed, fold), pre-training first unless --from is given.
    Ssl(SslArgs),
    /// Cross-validated evaluation; with only --out, re-evaluate a run directory.
    Eval(RunArgs),
    /// Cross-validated comparison of pipeline variants.
    Ablate(AblateArgs),
    /// Cross-validated runs over a hyperparameter grid.
    Sweep(SweepArgs),
    /// Per-class ranking of the connections the masker selects.
    Explain(ExplainArgs),
    /// Central-difference gradient checks of every op and both objectives.
    Gradcheck(GradArgs),
}

#[derive(Args, Debug)]
pub struct RunArgs {
    #[command(flatten)]
    pub common: Common,
    /// Variant tag: full, sub, rest, only or vanilla.
    #[arg(long, default_value = "full")]
    pub variant: String,
    /// Held-out fold override for single runs.
    #[arg(long)]
    pub fold: Option<usize>,
}

#[derive(Args, Debug)]
pub struct SslArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Run directory of a previous `pretrain`.
    #[arg(long)]
    pub from: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct AblateArgs {
    #[command(flatten)]
    pub common: Common,
    /// Comma-separated variant tags; all when omitted.
    #[arg(long)]
    pub variant: Option<String>,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    #[command(flatten)]
    pub common: Common,
    /// beta, lambda, labeled_fraction or epsilon.
    #[arg(long)]
    pub param: String,
    /// Comma-separated grid values.
    #[arg(long)]
    pub grid: String,
    #[arg(long, default_value = "full")]
    pub variant: String,
}

#[derive(Args, Debug)]
pub struct ExplainArgs {
    #[command(flatten)]
    pub common: Common,
    /// Run directory holding a trained masker; trains on every labeled graph otherwise.
    #[arg(long)]
    pub from: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct GradArgs {
    #[command(flatten)]
    pub common: Common,
    /// Random points per check.
    #[arg(long, default_value_t = 10)]
    pub points: usize,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("").trim_start_matches("error: ");
            eprintln!("error: kind=usage msg={first}");
            return ExitCode::from(2);
        }
    };
    let result = match cli.command {
        Command::Synth(a) => commands::synth(&a),
        Command::Ingest(a) => commands::ingest(&a),
        Command::Pretrain(a) => commands::pretrain(&a),
        Command::Ssl(a) => commands::ssl(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Ablate(a) => commands::ablate(&a),
        Command::Sweep(a) => commands::sweep(&a),
        Command::Explain(a) => commands::explain(&a),
        Command::Gradcheck(a) => commands::gradcheck(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", commands::error_line(&e));
            ExitCode::FAILURE
        }
    }
}
