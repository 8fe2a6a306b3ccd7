//! CSV artefacts: sweep report tables, the run ledger, curves and Bloch paths.

use std::fs::{self, OpenOptions};
use std::path::Path;

use ccmqd::diffusion::{bloch_rows, write_bloch_csv, write_trajectory_csv, Trajectory};
use ccmqd::training::{RunResult, TrainConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

/// SHA-256 of the canonical JSON of a training config, hex encoded.
pub fn config_hash(cfg: &TrainConfig) -> String {
    let json = serde_json::to_vec(cfg).expect("TrainConfig serializes");
    hex::encode(Sha256::digest(&json))
}

/// One row of a sweep's report table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub qubits: usize,
    #[serde(rename = "L_f")]
    pub l_f: usize,
    #[serde(rename = "K_f")]
    pub k_f: usize,
    #[serde(rename = "L_b")]
    pub l_b: usize,
    #[serde(rename = "K_b")]
    pub k_b: usize,
    pub strategy: String,
    pub family: String,
    /// Empty unless the strategy has a path term.
    pub lambda: Option<f64>,
    pub mean_fidelity: Option<f64>,
    pub std: Option<f64>,
    pub n_seeds: usize,
    /// `ok`, `partial`, `single_sample` or `failed: <reason>`.
    pub status: String,
}

impl ReportRow {
    fn shape(cfg: &TrainConfig) -> Self {
        Self {
            qubits: cfg.n_qubits,
            l_f: cfg.schedule.depth,
            k_f: cfg.schedule.kraus_count,
            l_b: cfg.backward_depth,
            k_b: cfg.backward_kraus,
            strategy: ccmqd::training::Strategy::label(&cfg.loss).to_owned(),
            family: cfg.schedule.family.to_string(),
            lambda: (cfg.loss.lambda != 0.0).then_some(cfg.loss.lambda),
            mean_fidelity: None,
            std: None,
            n_seeds: 0,
            status: String::new(),
        }
    }

    pub fn from_result(result: &RunResult) -> Self {
        let status = if result.partial {
            "partial"
        } else if result.single_sample {
            "single_sample"
        } else {
            "ok"
        };
        Self {
            mean_fidelity: Some(result.mean_fidelity),
            std: (!result.single_sample).then_some(result.std_fidelity),
            n_seeds: result.runs.len(),
            status: status.to_owned(),
            ..Self::shape(&result.config)
        }
    }

    pub fn failed(cfg: &TrainConfig, reason: &str) -> Self {
        Self { status: format!("failed: {reason}"), ..Self::shape(cfg) }
    }
}

pub fn write_report(path: &Path, rows: &[ReportRow]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    for row in rows {
        w.serialize(row).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

pub fn read_report(path: &Path) -> Result<Vec<ReportRow>, CliError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    r.deserialize().collect::<Result<_, _>>().map_err(|e| csv_err(path, e))
}

/// One line of the append-only run ledger.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerRow {
    pub config_hash: String,
    pub qubits: usize,
    pub family: String,
    pub strategy: String,
    pub lambda: f64,
    pub mean: f64,
    pub std: f64,
    pub iters: f64,
    pub wall_time: f64,
    /// Completed seeds, `;`-separated.
    pub seeds: String,
}

impl LedgerRow {
    pub fn from_result(result: &RunResult) -> Self {
        let cfg = &result.config;
        Self {
            config_hash: config_hash(cfg),
            qubits: cfg.n_qubits,
            family: cfg.schedule.family.to_string(),
            strategy: result.strategy.clone(),
            lambda: cfg.loss.lambda,
            mean: result.mean_fidelity,
            std: result.std_fidelity,
            iters: result.mean_iterations,
            wall_time: result.wall_time_s,
            seeds: result.runs.iter().map(|r| r.seed.to_string()).collect::<Vec<_>>().join(";"),
        }
    }
}

/// Appends rows to the ledger, writing the header if the file is new.
///
/// Callers collect every row first so concurrent cells never interleave.
pub fn append_ledger(path: &Path, rows: &[LedgerRow]) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    let fresh = fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
    let file = OpenOptions::new().create(true).append(true).open(path).map_err(|e| CliError::io(path, e))?;
    let mut w = csv::WriterBuilder::new().has_headers(fresh).from_writer(file);
    for row in rows {
        w.serialize(row).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

pub fn read_ledger(path: &Path) -> Result<Vec<LedgerRow>, CliError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    r.deserialize().collect::<Result<_, _>>().map_err(|e| csv_err(path, e))
}

/// Long-format training curves: `seed,iter,loss,F_0..F_{L_b}`.
pub fn write_curves(path: &Path, result: &RunResult) -> Result<(), CliError> {
    if result.runs.iter().any(|r| r.loss_curve.is_empty()) {
        return Err(CliError::Config("result has no recorded curves (set record_curves)".into()));
    }
    let depth = result.config.backward_depth;
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    let mut header = vec!["seed".to_owned(), "iter".to_owned(), "loss".to_owned()];
    header.extend((0..=depth).map(|t| format!("F_{t}")));
    w.write_record(&header).map_err(|e| csv_err(path, e))?;
    for run in &result.runs {
        for (i, (loss, fids)) in run.loss_curve.iter().zip(&run.fidelity_curves).enumerate() {
            let mut rec = vec![run.seed.to_string(), i.to_string(), loss.to_string()];
            rec.extend(fids.iter().map(f64::to_string));
            w.write_record(&rec).map_err(|e| csv_err(path, e))?;
        }
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

/// Bloch paths of the first run: forward `ρ_0 … ρ_{L_f}` and backward
/// `ρ̂_{L_b} … ρ̂_0`, written to `<stem>_forward.csv` and `<stem>_backward.csv`.
pub fn write_bloch(stem: &Path, result: &RunResult) -> Result<(), CliError> {
    if result.config.n_qubits != 1 {
        return Err(CliError::Config(format!("Bloch export needs a 1-qubit run, got {} qubits", result.config.n_qubits)));
    }
    let run = result.runs.first().ok_or_else(|| CliError::Config("result has no completed runs".into()))?;
    let states = run.states.as_ref().ok_or_else(|| CliError::Config("result has no recorded states (set record_states)".into()))?;
    let forward: Vec<_> = states.forward.iter().enumerate().collect();
    let backward: Vec<_> = states.backward.iter().enumerate().rev().collect();
    for (suffix, list) in [("forward", forward), ("backward", backward)] {
        let path = suffixed(stem, suffix);
        let rows = bloch_rows(&list)?;
        let file = fs::File::create(&path).map_err(|e| CliError::io(&path, e))?;
        write_bloch_csv(&rows, file)?;
    }
    Ok(())
}

pub fn write_trajectory(path: &Path, traj: &Trajectory) -> Result<(), CliError> {
    let file = fs::File::create(path).map_err(|e| CliError::io(path, e))?;
    write_trajectory_csv(traj, file)?;
    Ok(())
}

/// `dir/name.csv` becomes `dir/name_<suffix>.csv`.
pub fn suffixed(stem: &Path, suffix: &str) -> std::path::PathBuf {
    let base = stem.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    stem.with_file_name(format!("{base}_{suffix}.csv"))
}

fn csv_err(path: &Path, e: csv::Error) -> CliError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => CliError::io(path, io),
        other => CliError::Config(format!("{}: {other:?}", path.display())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ccmqd::channels::{NoiseFamily, NoiseSchedule};
    use ccmqd::loss::LossSpec;

    fn cfg() -> TrainConfig {
        TrainConfig::new(2, NoiseSchedule::new(NoiseFamily::HaarRandom, 10, 4, 0), 10, 10, LossSpec::pc(0.02))
    }

    #[test]
    fn hash_is_stable_and_sensitive() {
        let a = config_hash(&cfg());
        assert_eq!(a.len(), 64);
        assert_eq!(a, config_hash(&cfg()));
        let mut other = cfg();
        other.loss.lambda = 1.0;
        assert_ne!(a, config_hash(&other));
    }

    #[test]
    fn report_rows_round_trip() {
        let dir = std::env::temp_dir().join(format!("ccmqd-report-{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        let path = dir.join("report.csv");
        let mut ok = ReportRow::failed(&cfg(), "boom");
        ok.status = "ok".into();
        ok.mean_fidelity = Some(0.99);
        ok.std = Some(0.01);
        ok.n_seeds = 5;
        let rows = vec![ok, ReportRow::failed(&TrainConfig::new(1, NoiseSchedule::new(NoiseFamily::Depolarizing, 4, 4, 0), 4, 4, LossSpec::sqco()), "diverged")];
        write_report(&path, &rows).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("qubits,L_f,K_f,L_b,K_b,strategy,family,lambda,mean_fidelity,std,n_seeds,status"));
        assert_eq!(read_report(&path).unwrap(), rows);
        fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn suffix_replaces_extension() {
        assert_eq!(suffixed(Path::new("a/b.csv"), "forward"), Path::new("a/b_forward.csv"));
        assert_eq!(suffixed(Path::new("bloch"), "backward"), Path::new("bloch_backward.csv"));
    }
}
