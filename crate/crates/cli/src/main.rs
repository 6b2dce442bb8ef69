use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use lpcd_cli::config::describe_keys;
use lpcd_cli::error::{exit, EXIT_CODES_HELP};
use lpcd_cli::{run, Command, RunArgs};

/// Lightweight patch-level change detection.
#[derive(Parser)]
#[command(name = "lpcd", version, after_help = EXIT_CODES_HELP)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Args)]
struct Common {
    /// Run configuration (`section.key = value` lines; see `lpcd keys`).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides run.out.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Master seed; overrides run.seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for data-parallel work (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic bi-temporal dataset and store its patches.
    #[command(after_help = EXIT_CODES_HELP)]
    GenData(Common),
    /// Train a change classifier and save the best checkpoint.
    #[command(after_help = EXIT_CODES_HELP)]
    Train(Common),
    /// Run sensitivity-guided pruning and train the compressed network.
    #[command(after_help = EXIT_CODES_HELP)]
    Prune(Common),
    /// Evaluate a checkpoint on one dataset split.
    #[command(after_help = EXIT_CODES_HELP)]
    Eval(Common),
    /// Measure robustness to registration error.
    #[command(after_help = EXIT_CODES_HELP)]
    RegSweep(Common),
    /// Run two-stage change detection on a synthetic large scene.
    #[command(after_help = EXIT_CODES_HELP)]
    Pipeline(Common),
    /// Report parameter counts and forward throughput.
    #[command(after_help = EXIT_CODES_HELP)]
    Bench(Common),
    /// List every configuration key with its default.
    Keys,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (command, common) = match cli.command {
        Cmd::GenData(c) => (Command::GenData, c),
        Cmd::Train(c) => (Command::Train, c),
        Cmd::Prune(c) => (Command::Prune, c),
        Cmd::Eval(c) => (Command::Eval, c),
        Cmd::RegSweep(c) => (Command::RegSweep, c),
        Cmd::Pipeline(c) => (Command::Pipeline, c),
        Cmd::Bench(c) => (Command::Bench, c),
        Cmd::Keys => {
            print!("{}", describe_keys());
            return ExitCode::SUCCESS;
        }
    };
    if let Some(n) = common.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error[usage]: cannot start {n} worker threads: {e}");
            return ExitCode::from(exit::USAGE as u8);
        }
    }
    let args = RunArgs {
        config: common.config,
        out: common.out,
        seed: common.seed,
    };
    match run(command, &args) {
        Ok(summary) => {
            print!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", e.line());
            ExitCode::from(e.kind().1 as u8)
        }
    }
}
