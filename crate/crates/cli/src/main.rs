use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use funcspace_core::harness::{self, ExperimentConfig, ExperimentKind};
use funcspace_core::Error;

/// Run a function-space experiment described by a JSON config.
#[derive(Debug, Parser)]
#[command(name = "funcspace", version)]
struct Cli {
    /// train, distances, embed, forget, compare-optimizers or estimator-convergence
    kind: String,

    #[arg(long)]
    config: PathBuf,

    /// Overrides the seed in the config.
    #[arg(long)]
    seed: Option<u64>,

    /// Output directory (default: the config's output_dir, else runs/<kind>-seed<seed>).
    #[arg(long)]
    out: Option<PathBuf>,

    /// Dataset root.
    #[arg(long, env = "FUNCSPACE_DATA")]
    data: Option<PathBuf>,
}

const EXIT_EXPERIMENT: u8 = 1;
const EXIT_CONFIG: u8 = 2;

fn is_config_error(e: &Error) -> bool {
    matches!(e, Error::Config(_) | Error::Usage(_))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("funcspace: {e}");
            ExitCode::from(if is_config_error(&e) { EXIT_CONFIG } else { EXIT_EXPERIMENT })
        }
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    let kind: ExperimentKind = cli.kind.parse()?;
    let mut config = ExperimentConfig::load(&cli.config)?;
    config.resolve_kind(kind)?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    let out = cli
        .out
        .or_else(|| config.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from(format!("runs/{}-seed{}", kind.name(), config.seed)));
    let log = harness::run(config, cli.data.as_deref(), &out)?;
    for (name, value) in &log.final_metrics {
        println!("{name} = {value}");
    }
    println!("wrote {} files to {}", log.outputs.len() + 1, out.display());
    Ok(())
}
