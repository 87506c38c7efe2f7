//! `svsr`: blind and non-blind super-resolution runs, synthetic
//! degradation, metric evaluation and ablation presets.

pub mod ablate;
pub mod commands;
pub mod config;
pub mod error;

use std::ffi::OsString;

use clap::{Parser, Subcommand};

pub use config::RunConfig;
pub use error::{CliError, Result};

#[derive(Debug, Parser)]
#[command(name = "svsr", version, about = "Spatially-variant blind super-resolution")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Super-resolve an LR image (blind unless --gt-kernel is given).
    Sr(commands::SrArgs),
    /// Blur, subsample and add noise to an HR image.
    Degrade(commands::DegradeArgs),
    /// Y-channel PSNR/SSIM between two images.
    Eval(commands::EvalArgs),
    /// Run an ablation preset over a manifest.
    Ablate(ablate::AblateArgs),
}

pub fn execute(command: &Command) -> Result<()> {
    match command {
        Command::Sr(args) => {
            let cfg = commands::resolve_sr(args)?;
            let report = commands::run_sr(&cfg, &args.out)?;
            let summary = serde_json::json!({
                "out": args.out,
                "iterations_run": report.iterations_run,
                "result": report.result,
                "bicubic": report.bicubic,
            });
            println!("{summary}");
            Ok(())
        }
        Command::Degrade(args) => commands::run_degrade(args),
        Command::Eval(args) => commands::run_eval(args).map(|_| ()),
        Command::Ablate(args) => ablate::cmd_ablate(args).map(|_| ()),
    }
}

/// Parses `args` (including the program name) and runs the command,
/// returning the process exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(&cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
