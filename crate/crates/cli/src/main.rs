//! `smvlc` — runs and validates experiment configurations.
//!
//! Exit codes: 0 success, 1 configuration error, 2 runtime error.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use smvlc::experiment::{parse_config, run, validate, ExperimentConfig};
use smvlc::Error;

#[derive(Parser)]
#[command(name = "smvlc", version, about = "Spatial-modulation VLC experiment runner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment and write its CSV table.
    Run {
        config: PathBuf,
        /// Overrides the configuration's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Output path; overrides the configuration's `output`. Standard
        /// output when neither is given.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads (default: all cores).
        #[arg(long)]
        threads: Option<usize>,
    },
    /// List every problem in a configuration without running it.
    Validate { config: PathBuf },
}

const CONFIG_ERROR: u8 = 1;
const RUNTIME_ERROR: u8 = 2;

fn load(path: &Path) -> Result<ExperimentConfig, ExitCode> {
    let text = fs::read_to_string(path).map_err(|e| {
        eprintln!("error: cannot read {}: {e}", path.display());
        ExitCode::from(CONFIG_ERROR)
    })?;
    parse_config(&text).map_err(|d| {
        eprintln!("{}: {d}", path.display());
        ExitCode::from(CONFIG_ERROR)
    })
}

fn report(path: &Path, config: &ExperimentConfig) -> Result<(), ExitCode> {
    let problems = validate(config);
    for d in &problems {
        eprintln!("{}: {d}", path.display());
    }
    if problems.is_empty() {
        Ok(())
    } else {
        Err(ExitCode::from(CONFIG_ERROR))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Validate { config } => load(&config).and_then(|c| report(&config, &c)),
        Command::Run { config, seed, out, threads } => load(&config).and_then(|mut c| {
            if seed.is_some() {
                c.seed = seed;
            }
            report(&config, &c)?;
            if let Some(n) = threads {
                if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
                    eprintln!("error: thread pool: {e}");
                    return Err(ExitCode::from(RUNTIME_ERROR));
                }
            }
            let csv = run(&c).map_err(|e| {
                eprintln!("error: {e}");
                ExitCode::from(if matches!(e, Error::Config(_)) { CONFIG_ERROR } else { RUNTIME_ERROR })
            })?;
            match out.or_else(|| c.output.as_ref().map(PathBuf::from)) {
                Some(path) => fs::write(&path, csv).map_err(|e| {
                    eprintln!("error: cannot write {}: {e}", path.display());
                    ExitCode::from(RUNTIME_ERROR)
                }),
                None => {
                    print!("{csv}");
                    Ok(())
                }
            }
        }),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(code) => code,
    }
}
