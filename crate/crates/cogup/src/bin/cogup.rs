//! Batch experiment runner.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use cogup::cli::{run_experiment, Overrides, RateUnits, Units};

#[derive(Parser, Debug)]
#[command(
    name = "cogup",
    version,
    about = "Cognitive uplink power-control experiments"
)]
struct Args {
    /// Experiment spec file (flat key = value format).
    #[arg(long)]
    spec: PathBuf,

    /// Output directory for manifest.txt, results.csv, summary.txt.
    #[arg(long, default_value = "runs")]
    out: PathBuf,

    /// Override the spec's random seed.
    #[arg(long)]
    seed: Option<u64>,

    /// Worker threads (defaults to all cores).
    #[arg(long)]
    threads: Option<usize>,

    /// Budget units of the spec file: db or linear.
    #[arg(long)]
    units: Option<String>,

    /// Rate units of the emitted CSV: nats or bits.
    #[arg(long = "rate-units")]
    rate_units: Option<String>,
}

fn main() -> ExitCode {
    let args = Args::parse();
    if let Some(threads) = args.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
        {
            eprintln!("cogup: could not size the thread pool: {e}");
            return ExitCode::FAILURE;
        }
    }
    let overrides = Overrides {
        seed: args.seed,
        units: match args.units.as_deref().map(str::parse::<Units>) {
            None => None,
            Some(Ok(u)) => Some(u),
            Some(Err(e)) => {
                eprintln!("cogup: {e}");
                return ExitCode::FAILURE;
            }
        },
        rate_units: match args.rate_units.as_deref().map(str::parse::<RateUnits>) {
            None => None,
            Some(Ok(u)) => Some(u),
            Some(Err(e)) => {
                eprintln!("cogup: {e}");
                return ExitCode::FAILURE;
            }
        },
    };
    match run_experiment(&args.spec, &args.out, overrides) {
        Ok(artifacts) => {
            println!("manifest: {}", artifacts.manifest.display());
            println!("results : {}", artifacts.csv.display());
            println!("summary : {}", artifacts.summary.display());
            if let Ok(text) = std::fs::read_to_string(&artifacts.summary) {
                print!("{text}");
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("cogup: {e}");
            ExitCode::FAILURE
        }
    }
}
