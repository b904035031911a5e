//! Command-line front end: training, coding, evaluation and analysis.

mod commands;
mod svg;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use lscodec::Error;

#[derive(Parser, Debug)]
#[command(name = "lscodec", version, about = "Learned image codec with decoder-side latent shift")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Global {
    /// TOML key-value configuration file.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Overrides the seed from the configuration.
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,
    /// Restrict to one entry of the lambda list.
    #[arg(long = "lambda-index", global = true, value_name = "K")]
    pub lambda_index: Option<usize>,
    /// Disable the latent shift.
    #[arg(long = "no-shift", global = true)]
    pub no_shift: bool,
    /// Overrides the number of latent fine-tuning iterations.
    #[arg(long = "finetune-iters", global = true, value_name = "N")]
    pub finetune_iters: Option<usize>,
    /// Output directory (also where checkpoints are looked up by default).
    #[arg(long, global = true, value_name = "DIR", default_value = ".")]
    pub out: PathBuf,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train one model per lambda.
    Train,
    /// Compress an image to a bitstream file.
    Encode { input: PathBuf, output: PathBuf },
    /// Reconstruct an image (PPM or PNG by extension) from a bitstream.
    Decode { input: PathBuf, output: PathBuf },
    /// Rate-distortion evaluation on the held-out images.
    Eval,
    /// Stationarity residuals and gradient correlation survey.
    Analyze,
    /// Single-threaded timing and pass counts.
    Complexity,
}

/// Exit status for each error family.
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 3,
        Error::Image(_) | Error::Io(_) | Error::Dimension { .. } | Error::Argument(_) => 4,
        Error::Format(_) | Error::Coder(_) | Error::Truncated(_) => 5,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Train => commands::train(&cli.global),
        Command::Encode { input, output } => commands::encode(&cli.global, input, output),
        Command::Decode { input, output } => commands::decode(&cli.global, input, output),
        Command::Eval => commands::eval(&cli.global),
        Command::Analyze => commands::analyze(&cli.global),
        Command::Complexity => commands::complexity(&cli.global),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
