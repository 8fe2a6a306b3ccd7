//! Sweep files: a config list or a base config times a parameter grid.

use std::path::{Path, PathBuf};

use ccmqd::channels::NoiseFamily;
use ccmqd::loss::{LossKind, LossSpec};
use ccmqd::training::{run_experiment, RunResult, TrainConfig};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{check_schema, write_json};
use crate::error::{CliError, Outcome};
use crate::report::{append_ledger, write_report, LedgerRow, ReportRow};

/// Training strategy as named on a grid axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyName {
    Sqco,
    Hqto,
    /// HQTO with path constraint; expanded over the `lambda` axis.
    Pc,
}

/// Grid axes. An absent axis keeps the base value; a present axis must be
/// non-empty.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grid {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub qubits: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub family: Option<Vec<NoiseFamily>>,
    #[serde(default, rename = "L_f", skip_serializing_if = "Option::is_none")]
    pub l_f: Option<Vec<usize>>,
    #[serde(default, rename = "K_f", skip_serializing_if = "Option::is_none")]
    pub k_f: Option<Vec<usize>>,
    #[serde(default, rename = "L_b", skip_serializing_if = "Option::is_none")]
    pub l_b: Option<Vec<usize>>,
    #[serde(default, rename = "K_b", skip_serializing_if = "Option::is_none")]
    pub k_b: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub strategy: Option<Vec<StrategyName>>,
    /// Applies to `pc` cells only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepFile {
    pub schema_version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub output_dir: PathBuf,
    /// Assumptions echoed to the log and to `assumptions.txt`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub assumptions: Vec<String>,
    /// Explicit cells, run in the listed order.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub configs: Vec<TrainConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base: Option<TrainConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<Grid>,
}

fn axis<T: Clone>(name: &str, values: &Option<Vec<T>>, base: T) -> Result<Vec<T>, CliError> {
    match values {
        None => Ok(vec![base]),
        Some(v) if v.is_empty() => Err(CliError::Config(format!("grid axis `{name}` is empty"))),
        Some(v) => Ok(v.clone()),
    }
}

fn strategy_of(loss: &LossSpec) -> StrategyName {
    match loss.kind {
        LossKind::SqcoStep => StrategyName::Sqco,
        LossKind::Hqto => StrategyName::Hqto,
        LossKind::Pc => StrategyName::Pc,
    }
}

fn with_strategy(base: &LossSpec, strategy: StrategyName, lambda: f64) -> LossSpec {
    match strategy {
        StrategyName::Sqco => LossSpec { lambda: 0.0, ..LossSpec { kind: LossKind::SqcoStep, ..base.clone() } },
        StrategyName::Hqto => LossSpec { lambda: 0.0, ..LossSpec { kind: LossKind::Hqto, ..base.clone() } },
        StrategyName::Pc => LossSpec { lambda, ..LossSpec { kind: LossKind::Pc, ..base.clone() } },
    }
}

impl Grid {
    /// Cartesian product in axis order qubits, family, L_f, K_f, L_b, K_b,
    /// strategy, lambda (last axis fastest).
    pub fn expand(&self, base: &TrainConfig) -> Result<Vec<TrainConfig>, CliError> {
        let qubits = axis("qubits", &self.qubits, base.n_qubits)?;
        let families = axis("family", &self.family, base.schedule.family)?;
        let l_f = axis("L_f", &self.l_f, base.schedule.depth)?;
        let k_f = axis("K_f", &self.k_f, base.schedule.kraus_count)?;
        let l_b = axis("L_b", &self.l_b, base.backward_depth)?;
        let k_b = axis("K_b", &self.k_b, base.backward_kraus)?;
        let strategies = axis("strategy", &self.strategy, strategy_of(&base.loss))?;
        let lambdas = axis("lambda", &self.lambda, base.loss.lambda)?;
        let mut cells = Vec::new();
        for &n in &qubits {
            for &family in &families {
                for &lf in &l_f {
                    for &kf in &k_f {
                        for &lb in &l_b {
                            for &kb in &k_b {
                                for &s in &strategies {
                                    let lams: &[f64] = if s == StrategyName::Pc { &lambdas } else { &[0.0] };
                                    for &lambda in lams {
                                        let mut cfg = base.clone();
                                        cfg.n_qubits = n;
                                        cfg.schedule.family = family;
                                        cfg.schedule.depth = lf;
                                        cfg.schedule.kraus_count = kf;
                                        cfg.backward_depth = lb;
                                        cfg.backward_kraus = kb;
                                        cfg.loss = with_strategy(&base.loss, s, lambda);
                                        cells.push(cfg);
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        Ok(cells)
    }
}

impl SweepFile {
    /// All cells in execution order, validated up front.
    pub fn cells(&self) -> Result<Vec<TrainConfig>, CliError> {
        check_schema(self.schema_version)?;
        let cells = match (&self.base, &self.grid) {
            (Some(base), Some(grid)) if self.configs.is_empty() => grid.expand(base)?,
            (None, None) => self.configs.clone(),
            _ => return Err(CliError::Config("a sweep has either `configs` or both `base` and `grid`".into())),
        };
        if cells.is_empty() {
            return Err(CliError::Config("sweep has no cells".into()));
        }
        for (i, cell) in cells.iter().enumerate() {
            cell.validate().map_err(|e| CliError::Config(format!("cell {i}: {e}")))?;
        }
        Ok(cells)
    }
}

/// Results of a completed sweep.
#[derive(Debug)]
pub struct SweepOutcome {
    pub rows: Vec<ReportRow>,
    pub report_path: PathBuf,
    pub outcome: Outcome,
}

fn cell_file(dir: &Path, index: usize, cfg: &TrainConfig) -> PathBuf {
    let strategy = match cfg.loss.kind {
        LossKind::SqcoStep => "sqco".to_owned(),
        LossKind::Hqto => "hqto".to_owned(),
        LossKind::Pc => format!("pc{}", cfg.loss.lambda),
    };
    dir.join("cells").join(format!(
        "{index:03}_{}q_{}_{}x{}_{}x{}_{strategy}.json",
        cfg.n_qubits,
        cfg.schedule.family,
        cfg.schedule.depth,
        cfg.schedule.kraus_count,
        cfg.backward_depth,
        cfg.backward_kraus
    ))
}

/// Runs every cell, writes per-cell results, `report.csv` and ledger rows.
///
/// `out_dir` overrides the file's `output_dir`.
pub fn run_sweep(sweep: &SweepFile, out_dir: Option<&Path>) -> Result<SweepOutcome, CliError> {
    let cells = sweep.cells()?;
    let dir = out_dir.unwrap_or(&sweep.output_dir).to_path_buf();
    std::fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
    for note in &sweep.assumptions {
        log::info!("assumption: {note}");
    }
    if !sweep.assumptions.is_empty() {
        let path = dir.join("assumptions.txt");
        std::fs::write(&path, sweep.assumptions.join("\n") + "\n").map_err(|e| CliError::io(&path, e))?;
    }
    log::info!("sweep {}: {} cells", sweep.name.as_deref().unwrap_or("(unnamed)"), cells.len());

    let outcomes: Vec<Result<RunResult, String>> = cells
        .par_iter()
        .enumerate()
        .map(|(i, cfg)| {
            let result = run_experiment(cfg).map_err(|e| e.to_string())?;
            if result.runs.is_empty() {
                return Err(format!("all {} seeds failed", result.failures.len()));
            }
            write_json(&cell_file(&dir, i, cfg), &result).map_err(|e| e.to_string())?;
            log::info!("cell {i}: mean fidelity {:.6} ({:.1} s)", result.mean_fidelity, result.wall_time_s);
            Ok(result)
        })
        .collect();

    let mut rows = Vec::with_capacity(cells.len());
    let mut ledger = Vec::new();
    let mut any_failed = false;
    for (cfg, outcome) in cells.iter().zip(&outcomes) {
        match outcome {
            Ok(result) => {
                any_failed |= result.partial;
                rows.push(ReportRow::from_result(result));
                ledger.push(LedgerRow::from_result(result));
            }
            Err(reason) => {
                any_failed = true;
                log::warn!("cell failed: {reason}");
                rows.push(ReportRow::failed(cfg, reason));
            }
        }
    }
    let report_path = dir.join("report.csv");
    write_report(&report_path, &rows)?;
    append_ledger(&dir.join("ledger.csv"), &ledger)?;
    Ok(SweepOutcome {
        rows,
        report_path,
        outcome: if any_failed { Outcome::Partial } else { Outcome::Success },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ccmqd::channels::NoiseSchedule;

    fn base() -> TrainConfig {
        TrainConfig::new(1, NoiseSchedule::new(NoiseFamily::HaarRandom, 10, 4, 0), 10, 10, LossSpec::pc(0.02))
    }

    #[test]
    fn lambda_axis_applies_to_pc_only() {
        let grid = Grid {
            qubits: Some(vec![1, 2]),
            strategy: Some(vec![StrategyName::Sqco, StrategyName::Pc]),
            lambda: Some(vec![1.0, 0.02]),
            ..Grid::default()
        };
        let cells = grid.expand(&base()).unwrap();
        let shape: Vec<(usize, LossKind, f64)> = cells.iter().map(|c| (c.n_qubits, c.loss.kind, c.loss.lambda)).collect();
        assert_eq!(
            shape,
            vec![
                (1, LossKind::SqcoStep, 0.0),
                (1, LossKind::Pc, 1.0),
                (1, LossKind::Pc, 0.02),
                (2, LossKind::SqcoStep, 0.0),
                (2, LossKind::Pc, 1.0),
                (2, LossKind::Pc, 0.02),
            ]
        );
    }

    #[test]
    fn empty_axis_and_empty_sweep_are_rejected() {
        let grid = Grid { l_f: Some(vec![]), ..Grid::default() };
        assert!(grid.expand(&base()).is_err());
        let sweep = SweepFile {
            schema_version: 1,
            name: None,
            output_dir: "x".into(),
            assumptions: vec![],
            configs: vec![],
            base: None,
            grid: None,
        };
        assert!(sweep.cells().is_err());
    }

    #[test]
    fn sweep_file_rejects_unknown_grid_keys() {
        let text = r#"{"schema_version":1,"output_dir":"o","base":{"n_qubits":1,
            "schedule":{"family":"haar_random","L_f":2,"K_f":2},"L_b":2,"K_b":2,
            "loss":{"kind":"hqto","lambda":0},"seeds":[0]},"grid":{"qbits":[1]}}"#;
        let err = serde_json::from_str::<SweepFile>(text).unwrap_err().to_string();
        assert!(err.contains("qbits"), "{err}");
    }

    #[test]
    fn shipped_fixtures_parse_and_expand() {
        let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../sweeps");
        for (name, count) in [("table1", 9), ("table2", 8), ("table3", 5), ("table4", 7), ("table5", 7)] {
            let text = std::fs::read_to_string(root.join(format!("{name}.sweep"))).unwrap();
            let sweep: SweepFile = serde_json::from_str(&text).unwrap();
            assert_eq!(sweep.cells().unwrap().len(), count, "{name}");
        }
    }
}
