//! Command-line harness for the experiment pipelines.
//!
//! Exit codes: 0 on success, 1 for configuration or input errors, 2 for
//! statistical or numerical pipeline rejections, 3 for I/O failures.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use cmcancel::experiment::{
    exit_code, run_adjust, run_compare, run_ingest, run_sweep_xi, CliOverrides, ExperimentConfig,
};
use cmcancel::Result;

#[derive(Parser)]
#[command(
    name = "cmcancel",
    version,
    about = "Per-tone cancellation experiments for common-mode-coupled alien noise in DMT receivers"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Tabulate the uncancellable noise energy over the CM window misalignment.
    SweepXi(RunArgs),
    /// Compare per-tone cancellation, its lower bound, and the time-domain reference per tone.
    Compare(RunArgs),
    /// Identify the trained coupling, re-optimize the window position, and emit shifted coefficients.
    Adjust(RunArgs),
    /// Summarize and normalize a measured coupling file.
    Ingest(IngestArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Experiment configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory, created if missing.
    #[arg(long)]
    out: PathBuf,
    /// Override the configured random seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the configured worker-thread count (0 = all cores).
    #[arg(long)]
    threads: Option<usize>,
}

impl RunArgs {
    fn overrides(&self) -> CliOverrides {
        CliOverrides {
            seed: self.seed,
            threads: self.threads,
        }
    }
}

#[derive(Args)]
struct IngestArgs {
    /// Coupling file: one tap per line, `#` comments allowed.
    path: PathBuf,
    /// Output directory, created if missing.
    #[arg(long)]
    out: PathBuf,
}

fn dispatch(command: &Command) -> Result<()> {
    match command {
        Command::SweepXi(args) => {
            let loaded = ExperimentConfig::load(&args.config)?;
            let summary = run_sweep_xi(&loaded, &args.out, &args.overrides())?;
            println!("t_opt = {}", summary.t_opt);
            println!("xi(t_opt) = {:.6e}", summary.xi_at_opt);
            println!("rows = {}", summary.rows);
            println!("wrote {}", summary.csv_path.display());
        }
        Command::Compare(args) => {
            let loaded = ExperimentConfig::load(&args.config)?;
            let summary = run_compare(&loaded, &args.out, &args.overrides())?;
            println!("t_opt = {}", summary.t_opt);
            println!(
                "band median gap (per-tone at t_opt vs time domain) = {:.3} dB",
                summary.band_median_gap_db
            );
            println!("wrote {}", summary.csv_path.display());
            println!("wrote {}", summary.report_path.display());
        }
        Command::Adjust(args) => {
            let loaded = ExperimentConfig::load(&args.config)?;
            let summary = run_adjust(&loaded, &args.out, &args.overrides())?;
            println!("t_training = {}", summary.t_training);
            println!("l_hat = {}", summary.l_hat);
            println!("t_opt = {}", summary.t_opt);
            println!("xi: {:.6e} -> {:.6e}", summary.xi_before, summary.xi_after);
            println!(
                "coefficient update (relative) = {:.3e}",
                summary.coeff_update_relative
            );
            println!("wrote {}", summary.report_path.display());
            println!("wrote {}", summary.taps_path.display());
        }
        Command::Ingest(args) => {
            let summary = run_ingest(&args.path, &args.out)?;
            println!("taps = {}", summary.taps);
            println!("energy = {:.6e}", summary.energy);
            println!(
                "99.5% energy span = {} taps from index {}",
                summary.span, summary.span_start
            );
            println!("wrote {}", summary.normalized_path.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    // Clap's own exit conventions differ from this tool's contract, so
    // usage problems are mapped to the configuration-error code while help
    // and version output stay successful.
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let code = if err.use_stderr() { 1 } else { 0 };
            let _ = err.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}
