use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fracflux_cli::{list, run, RunOptions};

/// Verification runner for fractional calculus, Mittag-Leffler diffusion and
/// stationarity-conservation currents.
#[derive(Parser)]
#[command(name = "fracflux", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiments of a config file.
    Run {
        config: PathBuf,
        /// Output directory (overrides `out` in the config).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Run a single experiment of the config.
        #[arg(long)]
        only: Option<String>,
        /// Seed for randomized field pairs (overrides `seed` in the config).
        #[arg(long)]
        seed: Option<u64>,
    },
    /// List experiments whose name contains FILTER.
    List { filter: Option<String> },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match cli.command {
        Command::List { filter } => {
            let rows = list(filter.as_deref());
            let width = rows.iter().map(|r| r.0.len()).max().unwrap_or(0).max("experiment".len());
            println!("{:width$}  checks", "experiment");
            for (name, what) in rows {
                println!("{name:width$}  {what}");
            }
            ExitCode::SUCCESS
        }
        Command::Run { config, out, only, seed } => match run(&config, &RunOptions { out, only, seed }) {
            Ok(s) => {
                for r in &s.reports {
                    eprintln!("{:<6} {} {}", r.status.as_str(), r.experiment.name(), r.case_id);
                }
                eprintln!("results in {}", s.out.display());
                ExitCode::from(s.exit_code as u8)
            }
            Err(e) => {
                eprintln!("fracflux: {e}");
                ExitCode::from(e.exit_code() as u8)
            }
        },
    }
}
