use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use picontrol_cli::{run_experiment, MethodKind, Overrides, RunConfig, RunError};

/// Path integral control experiments.
#[derive(Debug, Parser)]
#[command(name = "picontrol", version)]
struct Args {
    /// Run configuration (TOML); a manifest from an earlier run also works.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the master sampling seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    method: Option<MethodKind>,
    #[arg(long)]
    samples: Option<usize>,
    /// Output directory.
    #[arg(long)]
    output: Option<PathBuf>,
}

fn main() -> ExitCode {
    let args = Args::parse();
    let overrides = Overrides {
        seed: args.seed,
        method: args.method,
        samples: args.samples,
        output: args.output,
    };
    let result = RunConfig::load_with(&args.config, &overrides)
        .map_err(RunError::from)
        .and_then(|config| run_experiment(&config));
    match result {
        Ok(summary) => {
            eprintln!("wrote {} steps to {}", summary.steps, summary.output.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
