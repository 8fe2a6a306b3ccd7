use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ccmqd::channels::ChannelRecord;
use ccmqd::training::RunResult;
use ccmqd_cli::config::ExperimentConfig;
use ccmqd_cli::report::{read_ledger, read_report};
use serde_json::{json, Value};

fn ccmqd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ccmqd"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn write(dir: &Path, name: &str, value: &Value) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, serde_json::to_string_pretty(value).unwrap()).unwrap();
    path
}

fn small_config(out: &Path) -> Value {
    json!({
        "schema_version": 1,
        "output_dir": out,
        "exports": {"bloch": true, "curves": true, "channels": true, "trajectory": true},
        "experiment": {
            "n_qubits": 1,
            "schedule": {"family": "depolarizing", "L_f": 4, "K_f": 4},
            "L_b": 4, "K_b": 4,
            "loss": {"kind": "pc", "lambda": 0.02},
            "target": "zero",
            "max_iters": 300,
            "seeds": [0, 1]
        }
    })
}

fn read_result(dir: &Path) -> RunResult {
    serde_json::from_str(&fs::read_to_string(dir.join("result.json")).unwrap()).unwrap()
}

#[test]
fn run_writes_every_artefact_and_they_read_back() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let cfg = write(tmp.path(), "cfg.json", &small_config(&out));
    let res = ccmqd(&["run", cfg.to_str().unwrap()]);
    assert_eq!(code(&res), 0, "{}", stderr(&res));

    let result = read_result(&out);
    assert_eq!(result.runs.len(), 2);
    assert!(result.mean_fidelity >= 0.999, "{}", result.mean_fidelity);

    let echoed: ExperimentConfig = serde_json::from_str(&fs::read_to_string(out.join("config.json")).unwrap()).unwrap();
    assert_eq!(echoed.experiment.seeds, vec![0, 1]);

    let ledger = read_ledger(&out.join("ledger.csv")).unwrap();
    assert_eq!(ledger.len(), 1);
    assert_eq!(ledger[0].mean, result.mean_fidelity);
    assert_eq!(ledger[0].seeds, "0;1");
    assert_eq!(ledger[0].config_hash, ccmqd_cli::report::config_hash(&result.config));

    for seed in [0, 1] {
        let text = fs::read_to_string(out.join(format!("channels_seed{seed}.json"))).unwrap();
        let records: Vec<ChannelRecord> = serde_json::from_str(&text).unwrap();
        assert_eq!(records.len(), 4);
        for r in &records {
            r.to_channel().unwrap();
        }
        let traj = fs::read_to_string(out.join(format!("trajectory_seed{seed}.csv"))).unwrap();
        assert!(traj.starts_with("step,purity,entropy_bits,fidelity_to_origin\n"));
        assert_eq!(traj.lines().count(), 6);
    }
}

#[test]
fn curves_export_matches_result() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let cfg = write(tmp.path(), "cfg.json", &small_config(&out));
    assert_eq!(code(&ccmqd(&["run", cfg.to_str().unwrap()])), 0);
    let result = read_result(&out);
    let curves = tmp.path().join("curves.csv");
    let res = ccmqd(&["export-curves", out.join("result.json").to_str().unwrap(), curves.to_str().unwrap()]);
    assert_eq!(code(&res), 0, "{}", stderr(&res));

    let mut reader = csv::Reader::from_path(&curves).unwrap();
    let header: Vec<String> = reader.headers().unwrap().iter().map(str::to_owned).collect();
    assert_eq!(header, ["seed", "iter", "loss", "F_0", "F_1", "F_2", "F_3", "F_4"]);
    let rows: Vec<Vec<f64>> = reader
        .records()
        .map(|r| r.unwrap().iter().map(|x| x.parse().unwrap()).collect())
        .collect();
    for run in &result.runs {
        let mine: Vec<&Vec<f64>> = rows.iter().filter(|r| r[0] == run.seed as f64).collect();
        assert_eq!(mine.len(), run.iterations + 1);
        assert!(mine.windows(2).all(|w| w[1][2] <= w[0][2]), "loss increased for seed {}", run.seed);
        let last = mine.last().unwrap();
        assert!((last[3] - run.final_fidelity).abs() < 1e-12);
    }
}

#[test]
fn bloch_export_tracks_the_depolarizing_path() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let cfg = write(tmp.path(), "cfg.json", &small_config(&out));
    assert_eq!(code(&ccmqd(&["run", cfg.to_str().unwrap()])), 0);
    let result = read_result(&out);
    let stem = tmp.path().join("path.csv");
    let res = ccmqd(&["export-bloch", out.join("result.json").to_str().unwrap(), stem.to_str().unwrap()]);
    assert_eq!(code(&res), 0, "{}", stderr(&res));

    let read = |name: &str| -> Vec<Vec<f64>> {
        let mut r = csv::Reader::from_path(tmp.path().join(name)).unwrap();
        assert_eq!(r.headers().unwrap().iter().collect::<Vec<_>>(), ["step", "x", "y", "z", "purity"]);
        r.records().map(|rec| rec.unwrap().iter().map(|x| x.parse().unwrap()).collect()).collect()
    };
    let fwd = read("path_forward.csv");
    let bwd = read("path_backward.csv");
    assert_eq!(fwd.len(), 5);
    assert_eq!(bwd.len(), 5);
    assert_eq!(fwd[0][4], 1.0);
    assert!(fwd.windows(2).all(|w| w[1][3] < w[0][3] && w[1][3] >= 0.0), "z not shrinking: {fwd:?}");
    assert_eq!(bwd.iter().map(|r| r[0]).collect::<Vec<_>>(), [4.0, 3.0, 2.0, 1.0, 0.0]);

    // Pure ρ₀ on the sphere: F = (1 + r₀·r̂₀)/2.
    let (r0, r_hat) = (&fwd[0], bwd.last().unwrap());
    let f = 0.5 * (1.0 + r0[1] * r_hat[1] + r0[2] * r_hat[2] + r0[3] * r_hat[3]);
    assert!((f - result.runs[0].final_fidelity).abs() < 1e-9, "{f} vs {}", result.runs[0].final_fidelity);
}

#[test]
fn config_errors_exit_one() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");

    let mut bad = small_config(&out);
    bad["experiment"]["loss"]["lamda"] = json!(0.1);
    let res = ccmqd(&["run", write(tmp.path(), "typo.json", &bad).to_str().unwrap()]);
    assert_eq!(code(&res), 1);
    assert!(stderr(&res).contains("lamda"), "{}", stderr(&res));

    let mut bad = small_config(&out);
    bad["experiment"]["seeds"] = json!([]);
    assert_eq!(code(&ccmqd(&["run", write(tmp.path(), "noseed.json", &bad).to_str().unwrap()])), 1);

    let mut bad = small_config(&out);
    bad["schema_version"] = json!(7);
    assert_eq!(code(&ccmqd(&["run", write(tmp.path(), "schema.json", &bad).to_str().unwrap()])), 1);

    let mut bad = small_config(&out);
    bad["experiment"]["n_qubits"] = json!(2);
    let res = ccmqd(&["run", write(tmp.path(), "bloch2q.json", &bad).to_str().unwrap()]);
    assert_eq!(code(&res), 1);
    assert!(stderr(&res).contains("bloch"));

    assert_eq!(code(&ccmqd(&["run", tmp.path().join("missing.json").to_str().unwrap()])), 1);
    assert!(!out.exists());
}

#[test]
fn exports_reject_unsuitable_results() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let mut cfg = small_config(&out);
    cfg["exports"] = json!({"curves": false});
    cfg["experiment"]["n_qubits"] = json!(2);
    cfg["experiment"]["record_curves"] = json!(false);
    cfg["experiment"]["max_iters"] = json!(5);
    assert_eq!(code(&ccmqd(&["run", write(tmp.path(), "cfg.json", &cfg).to_str().unwrap()])), 0);
    let result = out.join("result.json");
    let target = tmp.path().join("x.csv");
    let res = ccmqd(&["export-bloch", result.to_str().unwrap(), target.to_str().unwrap()]);
    assert_eq!(code(&res), 1);
    assert!(stderr(&res).contains("1-qubit"));
    let res = ccmqd(&["export-curves", result.to_str().unwrap(), target.to_str().unwrap()]);
    assert_eq!(code(&res), 1);
    assert!(stderr(&res).contains("curves"));
}

#[test]
fn reruns_are_bit_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for dir in [&a, &b] {
        let cfg = write(tmp.path(), "cfg.json", &small_config(dir));
        assert_eq!(code(&ccmqd(&["run", cfg.to_str().unwrap()])), 0);
    }
    let (ra, rb) = (read_result(&a), read_result(&b));
    assert_eq!(ra.mean_fidelity.to_bits(), rb.mean_fidelity.to_bits());
    assert_eq!(ra.std_fidelity.to_bits(), rb.std_fidelity.to_bits());
    assert_eq!(ra.runs, rb.runs);
}

#[test]
fn sweep_writes_report_in_cell_order() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("sweep");
    let sweep = json!({
        "schema_version": 1,
        "output_dir": out,
        "assumptions": ["toy grid"],
        "base": {
            "n_qubits": 1,
            "schedule": {"family": "haar_random", "L_f": 2, "K_f": 2},
            "L_b": 2, "K_b": 2,
            "loss": {"kind": "pc", "lambda": 0.1},
            "max_iters": 50,
            "seeds": [0, 1]
        },
        "grid": {"family": ["haar_random", "depolarizing"], "strategy": ["sqco", "hqto", "pc"], "lambda": [1.0, 0.1]}
    });
    let res = ccmqd(&["sweep", write(tmp.path(), "grid.sweep", &sweep).to_str().unwrap()]);
    assert_eq!(code(&res), 0, "{}", stderr(&res));
    let rows = read_report(&out.join("report.csv")).unwrap();
    let shape: Vec<(String, String, Option<f64>)> = rows.iter().map(|r| (r.family.clone(), r.strategy.clone(), r.lambda)).collect();
    let mut expected = Vec::new();
    for fam in ["haar_random", "depolarizing"] {
        expected.push((fam.to_owned(), "SQCO".to_owned(), None));
        expected.push((fam.to_owned(), "HQTO".to_owned(), None));
        expected.push((fam.to_owned(), "HQTO+PC".to_owned(), Some(1.0)));
        expected.push((fam.to_owned(), "HQTO+PC".to_owned(), Some(0.1)));
    }
    assert_eq!(shape, expected);
    assert!(rows.iter().all(|r| r.status == "ok" && r.n_seeds == 2));
    assert_eq!(read_ledger(&out.join("ledger.csv")).unwrap().len(), 8);
    assert_eq!(fs::read_dir(out.join("cells")).unwrap().count(), 8);
    assert_eq!(fs::read_to_string(out.join("assumptions.txt")).unwrap(), "toy grid\n");

    // A second sweep appends to the ledger without repeating the header.
    assert_eq!(code(&ccmqd(&["sweep", tmp.path().join("grid.sweep").to_str().unwrap()])), 0);
    let ledger = read_ledger(&out.join("ledger.csv")).unwrap();
    assert_eq!(ledger.len(), 16);
    for (x, y) in ledger[..8].iter().zip(&ledger[8..]) {
        assert_eq!((x.config_hash.as_str(), x.mean.to_bits(), x.std.to_bits()), (y.config_hash.as_str(), y.mean.to_bits(), y.std.to_bits()));
    }
}

#[test]
fn sweep_errors_exit_one() {
    let tmp = tempfile::tempdir().unwrap();
    let base = json!({
        "n_qubits": 1,
        "schedule": {"family": "haar_random", "L_f": 2, "K_f": 2},
        "L_b": 2, "K_b": 2,
        "loss": {"kind": "hqto"},
        "seeds": [0]
    });
    let cases = [
        json!({"schema_version": 1, "output_dir": tmp.path(), "base": base, "grid": {"qubits": []}}),
        json!({"schema_version": 1, "output_dir": tmp.path(), "configs": []}),
        json!({"schema_version": 1, "output_dir": tmp.path(), "base": base, "grid": {"qubit": [1]}}),
        json!({"schema_version": 1, "output_dir": tmp.path(), "base": base, "grid": {"L_f": [3], "strategy": ["sqco"]}}),
    ];
    for (i, case) in cases.iter().enumerate() {
        let res = ccmqd(&["sweep", write(tmp.path(), &format!("s{i}.sweep"), case).to_str().unwrap()]);
        assert_eq!(code(&res), 1, "case {i}: {}", stderr(&res));
    }
    assert!(!tmp.path().join("report.csv").exists());
}

#[test]
fn thread_override_is_validated() {
    let res = Command::new(env!("CARGO_BIN_EXE_ccmqd"))
        .args(["verify"])
        .env("CCMQD_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(code(&res), 1);
    assert!(stderr(&res).contains("CCMQD_THREADS"));
}

#[test]
fn fast_verify_passes() {
    let res = Command::new(env!("CARGO_BIN_EXE_ccmqd"))
        .args(["verify"])
        .env("CCMQD_THREADS", "1")
        .env("RUST_LOG", "warn")
        .output()
        .unwrap();
    let text = String::from_utf8_lossy(&res.stdout);
    assert_eq!(code(&res), 0, "{text}");
    assert_eq!(text.lines().filter(|l| l.starts_with("[PASS]")).count(), 7, "{text}");
}
