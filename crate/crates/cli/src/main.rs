//! `augurone`: train single-image generators and run the downstream tasks.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "augurone", version, about = "Non-adversarial single-image generation")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Args)]
struct Global {
    /// JSON config; flags given on the command line take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Run directory for artifacts and the run manifest.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Checkpoint directory to load (or, for `train`, to resume from).
    #[arg(long, global = true)]
    checkpoint: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Device::Cpu)]
    device: Device,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Device {
    Cpu,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a bundle from a config file.
    Train(commands::TrainArgs),
    /// Morph between two augmentations of the training image.
    Animate(commands::AnimateArgs),
    /// Generate new images, optionally wider than the training image.
    Sample(commands::SampleArgs),
    /// Turn a rough painting into an image.
    Paint2image(commands::ConditionArgs),
    /// Turn an edge map into an image.
    Edges2image(commands::ConditionArgs),
    /// Blend a pasted object into the scene.
    Harmonize(commands::HarmonizeArgs),
    /// Upscale beyond the training resolution.
    Superres(commands::SuperresArgs),
    /// Single-image Fréchet distance between two images.
    Sifid(commands::SifidArgs),
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .target(env_logger::Target::Stderr)
        .init();
    let cli = Cli::parse();
    match commands::run(&cli.global, cli.command) {
        Ok(summary) => {
            println!("{}", serde_json::to_string_pretty(&summary).expect("summary serializes"));
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
