//! `gammkit` command-line front end.
//!
//! Every command exits 0 after writing all of its files, or 1 with a single
//! diagnostic line on stderr naming the stage that failed.

mod commands;
mod model_file;
mod output;
mod report;
mod scenario;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;

use commands::{Command, RunConfig};
use report::Format;

/// Penalized-spline additive mixed models with AR(1) errors.
#[derive(Debug, Parser)]
#[command(name = "gammkit", version)]
struct Cli {
    command: Command,
    /// Input CSV file.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Model file (scenario file for `simulate`); give twice or more for `compare`.
    #[arg(long)]
    spec: Vec<PathBuf>,
    /// AR(1) coefficient, overriding the model file.
    #[arg(long)]
    rho: Option<f64>,
    /// Output directory.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    format: Format,
    #[arg(long)]
    max_lag: Option<usize>,
    #[arg(long)]
    n_perm: Option<usize>,
    /// New covariate values for `predict`.
    #[arg(long)]
    newdata: Option<PathBuf>,
    /// Term left out of `predict` (repeatable), e.g. `re(subject)`.
    #[arg(long)]
    exclude: Vec<String>,
}

fn threads() -> Result<(), String> {
    let Ok(v) = std::env::var("GAMMKIT_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n >= 1)
        .ok_or_else(|| format!("GAMMKIT_THREADS must be a positive integer, got '{v}'"))?;
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => e.exit(),
        Err(e) => {
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("").trim_start_matches("error: ");
            eprintln!("gammkit: arguments: {first}");
            return ExitCode::FAILURE;
        }
    };
    if let Err(e) = threads() {
        eprintln!("gammkit: arguments: {e}");
        return ExitCode::FAILURE;
    }
    let cfg = RunConfig {
        command: cli.command,
        data: cli.data,
        specs: cli.spec,
        rho: cli.rho,
        out: cli.out,
        seed: cli.seed,
        format: cli.format,
        max_lag: cli.max_lag,
        n_perm: cli.n_perm,
        newdata: cli.newdata,
        exclude: cli.exclude,
    };
    match commands::run(&cfg) {
        Ok(files) => {
            let mut stdout = std::io::stdout().lock();
            for f in files {
                // a closed pipe is not a failure of the command
                let _ = writeln!(stdout, "{}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("gammkit: {e}");
            ExitCode::FAILURE
        }
    }
}
