use std::fs::File;
use std::io::BufReader;
use std::path::PathBuf;
use std::process::ExitCode;

use capclass_cli::oracle::oracle_1d;
use capclass_cli::{read_rows, run_to_dir, summarize, CliError, CliResult, ExperimentConfig};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "capclass", version, about = "Capacity-constrained classification experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment and write results.csv, summary.json and config.json.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Defaults to the config's `output_dir`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Aggregate a results CSV into a JSON summary on stdout.
    Summarize {
        #[arg(long = "in")]
        input: PathBuf,
    },
    /// Print gamma*, its region, the Bayes region and mu_c of the 1D scenario.
    #[command(name = "oracle-1d")]
    Oracle1d {
        #[arg(long)]
        pi0: f64,
        #[arg(long)]
        b: f64,
        #[arg(long, allow_negative_numbers = true)]
        mu: f64,
    },
}

fn print_json<T: serde::Serialize>(value: &T) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Data(e.to_string()))?;
    println!("{text}");
    Ok(())
}

fn execute(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Run { config, out } => {
            let cfg = ExperimentConfig::from_path(&config)?;
            let dir = out
                .or_else(|| cfg.output_dir.clone())
                .ok_or_else(|| CliError::Config("output_dir: no --out given and none in the config".into()))?;
            let res = run_to_dir(&cfg, &dir)?;
            eprintln!("{} rows written to {}", res.rows.len(), dir.join("results.csv").display());
            Ok(())
        }
        Command::Summarize { input } => {
            let f = File::open(&input).map_err(|e| CliError::Data(format!("{}: {e}", input.display())))?;
            print_json(&summarize(&read_rows(BufReader::new(f))?))
        }
        Command::Oracle1d { pi0, b, mu } => print_json(&oracle_1d(pi0, b, mu)?),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
