use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use textmol::pipeline::{self, PipelineError, RunConfig};

/// Text-conditional molecule generation pipeline.
///
/// Settings come from `--config FILE` (flat `key = value` lines) and any
/// trailing `--key value` overrides, e.g. `--d 64 --drop-exp`.
#[derive(Parser)]
#[command(name = "textmol", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load or synthesize the corpus and write its splits.
    Prepare(Args),
    /// Build prompts, query the LLM and write predictions.
    RunLlm(Args),
    /// Train fusion and decoder; write checkpoint and metrics log.
    Train(Args),
    /// Generate for a split and write metric reports.
    Evaluate(Args),
    /// Answer one `--query`.
    Generate(Args),
    /// Train and score every ablation variant.
    Ablate(Args),
}

#[derive(clap::Args)]
struct Args {
    #[arg(long)]
    config: Option<PathBuf>,
    /// `--key value` settings applied over the config file.
    #[arg(trailing_var_arg = true, allow_hyphen_values = true)]
    overrides: Vec<String>,
}

fn run(cli: Cli) -> Result<String, PipelineError> {
    let (args, cmd): (&Args, fn(&RunConfig) -> Result<String, PipelineError>) = match &cli.command {
        Command::Prepare(a) => (a, pipeline::cmd_prepare),
        Command::RunLlm(a) => (a, pipeline::cmd_run_llm),
        Command::Train(a) => (a, pipeline::cmd_train),
        Command::Evaluate(a) => (a, pipeline::cmd_evaluate),
        Command::Generate(a) => (a, pipeline::cmd_generate),
        Command::Ablate(a) => (a, pipeline::cmd_ablate),
    };
    let mut cfg = match &args.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    cfg.apply_overrides(&args.overrides)?;
    cmd(&cfg)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(out) => {
            print!("{out}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
