use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use genlab_cli::{CliError, RunOptions};

#[derive(Parser)]
#[command(name = "genlab", version, about = "Run generalization experiments from JSON configs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment a config describes.
    Run {
        config: PathBuf,
        /// Override the config's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads (0: all cores).
        #[arg(long, default_value_t = 0)]
        threads: usize,
        /// Run on a single thread.
        #[arg(long)]
        deterministic: bool,
    },
    /// Parse and check a config without running it.
    Validate { config: PathBuf },
    /// Summarize a finished output directory.
    Report { dir: PathBuf },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result: Result<(), CliError> = match cli.command {
        Command::Run { config, seed, threads, deterministic } => {
            let opts = RunOptions {
                seed,
                threads,
                deterministic,
                output_dir: std::env::var_os("GENLAB_OUT").map(PathBuf::from),
            };
            genlab_cli::run(&config, &opts).map(|s| {
                for c in &s.checks {
                    println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
                }
                println!("wrote {}", s.output_dir.display());
            })
        }
        Command::Validate { config } => genlab_cli::validate(&config).map(|c| println!("ok {}", c.experiment.name())),
        Command::Report { dir } => genlab_cli::report(&dir).map(|s| print!("{s}")),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
