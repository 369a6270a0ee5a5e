use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use hloc_cli::commands::{
    AugmentArgs, DescribeArgs, EvalArgs, ImportArgs, IngestArgs, LocalizeArgs, SplitArgs, TrainArgs,
};
use hloc_cli::pipeline::{run_pipeline, PipelineConfig};
use hloc_cli::{Stage, EXIT_USAGE};

/// Hierarchical visual localization in panoramic image maps.
#[derive(Parser)]
#[command(name = "hloc", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    Ingest(IngestArgs),
    Split(SplitArgs),
    Augment(AugmentArgs),
    Describe(DescribeArgs),
    ImportDesc(ImportArgs),
    Train(TrainArgs),
    Localize(LocalizeArgs),
    Eval(EvalArgs),
    /// Run the whole pipeline from a config file.
    Reproduce {
        #[arg(long)]
        config: PathBuf,
        /// Rerun stages even when their outputs are current.
        #[arg(long)]
        force: bool,
    },
}

fn configure_threads() -> Result<(), String> {
    let Ok(value) = std::env::var("HLOC_THREADS") else {
        return Ok(());
    };
    let n: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| format!("HLOC_THREADS must be a positive integer, got {value:?}"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| e.to_string())
}

fn exit(code: i32) -> ExitCode {
    ExitCode::from(code as u8)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = configure_threads() {
        eprintln!("error: {e}");
        return exit(EXIT_USAGE);
    }
    let (stage, result) = match &cli.command {
        Command::Ingest(a) => (Stage::Ingest, a.run()),
        Command::Split(a) => (Stage::Split, a.run()),
        Command::Augment(a) => (Stage::Augment, a.run()),
        Command::Describe(a) => (Stage::Describe, a.run()),
        Command::ImportDesc(a) => (Stage::Describe, a.run()),
        Command::Train(a) => (Stage::Train, a.run()),
        Command::Localize(a) => (Stage::Localize, a.run()),
        Command::Eval(a) => (Stage::Eval, a.run()),
        Command::Reproduce { config, force } => {
            let cfg = match PipelineConfig::load(config) {
                Ok(cfg) => cfg,
                Err(e) => {
                    eprintln!("error: {e:#}");
                    return exit(EXIT_USAGE);
                }
            };
            return match run_pipeline(&cfg, *force) {
                Ok(_) => ExitCode::SUCCESS,
                Err(e) => {
                    eprintln!("error: {e}");
                    exit(e.stage.exit_code())
                }
            };
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {stage} failed: {e:#}");
            exit(stage.exit_code())
        }
    }
}
