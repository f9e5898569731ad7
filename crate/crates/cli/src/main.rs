//! Batch CLI for the sculpt pipeline.
//!
//! ```text
//! sculpt {invert|edit|relight|generate|sweep} [--config PATH] [overrides...]
//! ```
//!
//! Precedence: command-line flags override config-file values, which
//! override the documented defaults. Exit codes: 0 success, 2 configuration
//! error, 3 pipeline error; failures print a one-line JSON error record to
//! stderr.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use sculpt_cli::config::{parse_config, Command, Overrides};
use sculpt_cli::runner::run_command;
use sculpt_cli::CliError;

#[derive(Parser)]
#[command(
    name = "sculpt",
    version,
    about = "Guided latent-space optimization over a toy 3D scene generator",
    propagate_version = true
)]
struct Cli {
    #[command(subcommand)]
    command: CommandArg,
}

#[derive(Subcommand)]
enum CommandArg {
    /// Fit a latent to an input image (reconstruction/identity only).
    Invert(CommonArgs),
    /// Prompt-guided editing with preservation terms.
    Edit(CommonArgs),
    /// Match a target illumination without distillation.
    Relight(CommonArgs),
    /// Text-only generation from the latent mean.
    Generate(CommonArgs),
    /// One run per value of a swept loss weight.
    Sweep(CommonArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// JSON configuration file; omitted fields use documented defaults.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Override the run seed.
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    /// Override the artifact directory.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Override the prompt (must exist in the config's prompt table).
    #[arg(long, value_name = "NAME")]
    prompt: Option<String>,
    /// Override the iteration count.
    #[arg(long, value_name = "N")]
    iters: Option<usize>,
    /// Override the optimizer step size.
    #[arg(long, value_name = "X")]
    step: Option<f64>,
    /// Override the square image resolution.
    #[arg(long, value_name = "N")]
    image_size: Option<usize>,
    /// Use a seeded render of a known latent as the input image.
    #[arg(long, value_name = "N")]
    latent_seed: Option<u64>,
    /// Fine-tune the decoder around the optimized latent afterward.
    #[arg(long)]
    tune: bool,
}

impl CommonArgs {
    fn split(self) -> (Option<PathBuf>, Overrides) {
        (
            self.config,
            Overrides {
                seed: self.seed,
                out_dir: self.out,
                prompt: self.prompt,
                iters: self.iters,
                step: self.step,
                image_size: self.image_size,
                latent_seed: self.latent_seed,
                tune: self.tune,
            },
        )
    }
}

fn execute(command: Command, args: CommonArgs) -> Result<(), CliError> {
    let (config_path, overrides) = args.split();
    let config = parse_config(command, config_path.as_deref(), &overrides)?;
    let summary = run_command(&config)?;
    for manifest in &summary.manifests {
        println!("wrote {}", manifest.display());
    }
    println!("done: {} ({})", summary.out_dir.display(), command.name());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (command, args) = match cli.command {
        CommandArg::Invert(a) => (Command::Invert, a),
        CommandArg::Edit(a) => (Command::Edit, a),
        CommandArg::Relight(a) => (Command::Relight, a),
        CommandArg::Generate(a) => (Command::Generate, a),
        CommandArg::Sweep(a) => (Command::Sweep, a),
    };
    match execute(command, args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("{}", err.record());
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
