//! Subcommand implementations. Each returns an [`Outcome`] or a [`CliError`]
//! and leaves printing of the final status to the binary.

use std::path::{Path, PathBuf};

use ccmqd::channels::{build_forward_sequence, ChannelRecord, NoiseSchedule};
use ccmqd::training::{run_experiment, seed_trajectory, RunResult};

use crate::config::{load_experiment, read_json, write_json, ExperimentConfig};
use crate::error::{CliError, Outcome};
use crate::report::{append_ledger, write_bloch, write_curves, write_trajectory, LedgerRow};
use crate::sweep::{run_sweep, SweepFile, SweepOutcome};
use crate::verify::{run_checklist, Check, Level};

/// Where `run` put its artefacts.
#[derive(Debug)]
pub struct RunOutput {
    pub dir: PathBuf,
    pub result: RunResult,
    pub outcome: Outcome,
}

fn check_exports(cfg: &ExperimentConfig) -> Result<(), CliError> {
    if cfg.exports.bloch && cfg.experiment.n_qubits != 1 {
        return Err(CliError::Config(format!(
            "exports.bloch needs n_qubits = 1, got {}",
            cfg.experiment.n_qubits
        )));
    }
    Ok(())
}

/// `ccmqd run`: trains every seed and writes `result.json`, a ledger row and
/// the requested exports under the output directory.
pub fn cmd_run(config_path: &Path, out_dir: Option<&Path>) -> Result<RunOutput, CliError> {
    let cfg = load_experiment(config_path)?;
    check_exports(&cfg)?;
    let dir = out_dir.unwrap_or(&cfg.output_dir).to_path_buf();
    let train = cfg.train_config();
    log::info!(
        "run {}: {} qubits, {} seeds",
        cfg.name.as_deref().unwrap_or("(unnamed)"),
        train.n_qubits,
        train.seeds.len()
    );
    let result = run_experiment(&train)?;
    write_json(&dir.join("config.json"), &cfg)?;
    write_json(&dir.join("result.json"), &result)?;
    if !result.runs.is_empty() {
        append_ledger(&dir.join("ledger.csv"), &[LedgerRow::from_result(&result)])?;
    }
    if cfg.exports.curves && !result.runs.is_empty() {
        write_curves(&dir.join("curves.csv"), &result)?;
    }
    if cfg.exports.bloch && !result.runs.is_empty() {
        write_bloch(&dir.join("bloch.csv"), &result)?;
    }
    for run in &result.runs {
        if cfg.exports.channels {
            let schedule = NoiseSchedule { seed: run.seed, ..train.schedule.clone() };
            let records: Vec<ChannelRecord> = build_forward_sequence(&schedule, train.dim())?
                .iter()
                .map(|ch| ChannelRecord::from_channel(ch, schedule.family, run.seed))
                .collect();
            write_json(&dir.join(format!("channels_seed{}.json", run.seed)), &records)?;
        }
        if cfg.exports.trajectory {
            let traj = seed_trajectory(&train, run.seed)?;
            write_trajectory(&dir.join(format!("trajectory_seed{}.csv", run.seed)), &traj)?;
        }
    }
    let outcome = if result.partial { Outcome::Partial } else { Outcome::Success };
    Ok(RunOutput { dir, result, outcome })
}

/// `ccmqd sweep`.
pub fn cmd_sweep(sweep_path: &Path, out_dir: Option<&Path>) -> Result<SweepOutcome, CliError> {
    let sweep: SweepFile = read_json(sweep_path)?;
    run_sweep(&sweep, out_dir)
}

/// `ccmqd verify`: success iff every check passes.
pub fn cmd_verify(level: Level, sink: impl FnMut(&Check)) -> (Vec<Check>, Outcome) {
    let checks = run_checklist(level, sink);
    let outcome = if checks.iter().all(|c| c.pass) { Outcome::Success } else { Outcome::Partial };
    (checks, outcome)
}

/// `ccmqd export-bloch`.
pub fn cmd_export_bloch(result_path: &Path, out: &Path) -> Result<Outcome, CliError> {
    let result: RunResult = read_json(result_path)?;
    write_bloch(out, &result)?;
    Ok(Outcome::Success)
}

/// `ccmqd export-curves`.
pub fn cmd_export_curves(result_path: &Path, out: &Path) -> Result<Outcome, CliError> {
    let result: RunResult = read_json(result_path)?;
    write_curves(out, &result)?;
    Ok(Outcome::Success)
}
