mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "eegm2", version, about = "Self-supervised state-space autoencoder experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Options shared by every subcommand.
#[derive(Args, Clone)]
pub struct Common {
    /// TOML config file; flags override its values
    #[arg(long, short)]
    pub config: Option<PathBuf>,
    /// output directory (default: <output root>/<command>)
    #[arg(long, short)]
    pub out: Option<PathBuf>,
    /// root for default output directories
    #[arg(long, env = "EEGM2_OUTPUT_ROOT", default_value = "runs")]
    pub output_root: PathBuf,
    /// replace existing outputs
    #[arg(long)]
    pub force: bool,
    /// global seed override
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic labeled dataset
    Synth(commands::SynthArgs),
    /// Self-supervised pretraining
    Pretrain(commands::PretrainArgs),
    /// Probe or fine-tune on held-out subjects
    Eval(commands::EvalArgs),
    /// Peak-memory and speed sweep over sequence length
    Bench(commands::BenchArgs),
    /// Compare architecture variants on one dataset
    Ablate(commands::AblateArgs),
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(a) => commands::synth(a),
        Command::Pretrain(a) => commands::pretrain(a),
        Command::Eval(a) => commands::eval(a),
        Command::Bench(a) => commands::bench(a),
        Command::Ablate(a) => commands::ablate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
