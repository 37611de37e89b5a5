//! `mdat`: corpus generation, training, translation, evaluation,
//! latency benchmarking and the back-translation ablation.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use mdat::decoding::DecodeMethod;
use mdat::pivotbt::BtMode;

/// Settings come from `--config FILE` (TOML, sections paths, corpus, model,
/// train, bt, decode, eval, bench) and `--section.key value` overrides.
#[derive(Parser, Debug)]
#[command(
    name = "mdat",
    version,
    about = "Multilingual non-autoregressive translation with a directed acyclic decoder",
    after_help = "Any configuration key can be overridden as --<section>.<key> <value>, e.g. --train.total_updates 500.\nSections: paths, corpus, model, train, bt, decode, eval, bench."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Validate the configuration and stop.
    #[arg(long, global = true)]
    dry_run: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic multilingual corpus into paths.corpus.
    GenCorpus {
        #[command(flatten)]
        common: Common,
        /// Overwrite a non-empty corpus directory.
        #[arg(long)]
        force: bool,
    },
    /// Train on paths.corpus, writing into paths.out.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_parser = parse_bt_mode)]
        bt_mode: Option<BtMode>,
        /// Continue from the state file in paths.out.
        #[arg(long)]
        resume: bool,
        /// Start over in a non-empty output directory.
        #[arg(long)]
        force: bool,
        /// Stop after this many updates, leaving a state file to resume from.
        #[arg(long)]
        until: Option<u64>,
    },
    /// Translate one sentence per line.
    Translate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Source language name (checked against the corpus languages).
        #[arg(long)]
        src: String,
        #[arg(long)]
        tgt: String,
        #[arg(long, value_parser = parse_decode)]
        decode: Option<DecodeMethod>,
    },
    /// Score a model on the test split and write a JSON report.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        #[arg(long, value_parser = parse_decode)]
        decode: Option<DecodeMethod>,
        /// Report path; defaults to paths.out/report_<decoder>.json.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Per-sentence latency at batch size 1, against an autoregressive
    /// baseline of the same size.
    Bench {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        /// Trained baseline checkpoint; without it an untrained baseline of
        /// the same configuration is timed (decoding length is forced).
        #[arg(long)]
        baseline: Option<PathBuf>,
        #[arg(long, value_parser = parse_decode)]
        decode: Option<DecodeMethod>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Train and score all four back-translation variants.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        force: bool,
    },
}

fn parse_bt_mode(s: &str) -> Result<BtMode, String> {
    s.parse().map_err(|e: mdat::Error| e.to_string())
}

fn parse_decode(s: &str) -> Result<DecodeMethod, String> {
    s.parse().map_err(|e: mdat::Error| e.to_string())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let (args, overrides) = config::extract_overrides(std::env::args().collect());
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::run(cli.command, &overrides) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}
