use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use dcf_cli::config::Mode;
use dcf_cli::run::{run, EXIT_CONFIG, REPORT_FILE};

/// Solves the drift-modified conformal constraint system on the flat torus.
#[derive(Debug, Parser)]
#[command(name = "dcf", version)]
struct Cli {
    /// What to run.
    #[arg(value_enum)]
    mode: Mode,
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory for report.json and field dumps.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed for the randomized estimates; overrides the config.
    #[arg(long)]
    seed: Option<u64>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.mode, &cli.config, cli.out.as_deref(), cli.seed) {
        Ok(outcome) => {
            let report = &outcome.report;
            for v in &report.verdicts {
                println!("{} {}\tvalue {}\tthreshold {}", v.name, v.status, v.value, v.threshold);
            }
            if let Some(e) = &report.error {
                eprintln!("error: {e}");
            }
            println!("{}", outcome.out_dir.join(REPORT_FILE).display());
            ExitCode::from(report.exit_code as u8)
        }
        Err(e) => {
            eprintln!("config error at {e}");
            ExitCode::from(EXIT_CONFIG as u8)
        }
    }
}
