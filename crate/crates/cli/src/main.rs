use std::path::PathBuf;
use std::process::ExitCode;

use ccmqd_cli::commands::{cmd_export_bloch, cmd_export_curves, cmd_run, cmd_sweep, cmd_verify};
use ccmqd_cli::error::{exit_code, CliError, Outcome};
use ccmqd_cli::verify::Level;
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "ccmqd", version, about = "Channel-constrained quantum diffusion experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train every seed of one experiment config.
    Run {
        config: PathBuf,
        /// Override the config's output_dir.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run every cell of a sweep file and write report.csv.
    Sweep {
        sweep: PathBuf,
        /// Override the sweep's output_dir.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the invariant checklist.
    Verify {
        /// 1000 trials per property instead of 50.
        #[arg(long)]
        full: bool,
    },
    /// Write <out>_forward.csv and <out>_backward.csv from a 1-qubit result.
    ExportBloch { result: PathBuf, out: PathBuf },
    /// Write long-format training curves from a result.
    ExportCurves { result: PathBuf, out: PathBuf },
}

fn init_threads() -> Result<(), CliError> {
    let Ok(raw) = std::env::var("CCMQD_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Config(format!("CCMQD_THREADS must be a positive integer, got `{raw}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Config(e.to_string()))
}

fn dispatch(cli: Cli) -> Result<Outcome, CliError> {
    init_threads()?;
    match cli.command {
        Command::Run { config, out } => {
            let run = cmd_run(&config, out.as_deref())?;
            for f in &run.result.failures {
                eprintln!("seed {} failed: {}", f.seed, f.error);
            }
            println!(
                "{}: mean fidelity {:.6} +/- {:.1e} over {} seeds -> {}",
                run.result.strategy,
                run.result.mean_fidelity,
                run.result.std_fidelity,
                run.result.runs.len(),
                run.dir.display()
            );
            Ok(run.outcome)
        }
        Command::Sweep { sweep, out } => {
            let done = cmd_sweep(&sweep, out.as_deref())?;
            for row in &done.rows {
                println!(
                    "{}q ({},{}) ({},{}) {:<8} {:<13} {:>8} {:>10} {}",
                    row.qubits,
                    row.l_f,
                    row.k_f,
                    row.l_b,
                    row.k_b,
                    row.strategy,
                    row.family,
                    row.lambda.map(|l| l.to_string()).unwrap_or_default(),
                    row.mean_fidelity.map(|m| format!("{m:.6}")).unwrap_or_default(),
                    row.status
                );
            }
            println!("report: {}", done.report_path.display());
            Ok(done.outcome)
        }
        Command::Verify { full } => {
            let level = if full { Level::Full } else { Level::Fast };
            let (_, outcome) = cmd_verify(level, |c| println!("{c}"));
            Ok(outcome)
        }
        Command::ExportBloch { result, out } => cmd_export_bloch(&result, &out),
        Command::ExportCurves { result, out } => cmd_export_curves(&result, &out),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let result = dispatch(Cli::parse());
    if let Err(e) = &result {
        eprintln!("error: {e}");
    }
    exit_code(&result)
}
