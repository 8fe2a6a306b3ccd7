//! Cross-module invariant checklist behind `ccmqd verify`.

use std::fmt;
use std::time::Instant;

use ccmqd::channels::{
    apply, haar_random_channel, lindblad_raw_ops, stinespring_apply, stinespring_unitary, thermal_lindblad_spec, verify_cptp, Channel,
    NoiseFamily, NoiseSchedule, CPTP_TOL,
};
use ccmqd::diffusion::simulate;
use ccmqd::gradient::fd_oracle;
use ccmqd::linalg::{complex_gaussian, herm_eig, ComplexMatrix};
use ccmqd::loss::LossSpec;
use ccmqd::rng::{stream, Prng, Stream};
use ccmqd::state::{fidelity, random_pure_state, uhlmann_fidelity, DensityMatrix, PureState};
use ccmqd::stiefel::{cayley_update, init_backward, InitKind, StiefelPoint, STIEFEL_TOL};
use ccmqd::training::{run_experiment, TrainConfig};
use rand::Rng;

use crate::config::ExperimentConfig;

/// Root seed of every verification stream.
const VERIFY_SEED: u64 = 0x5eed;

/// Stored HQTO+PC regression config for the intermediate-fidelity trade-off.
pub const TRADE_OFF_FIXTURE: &str = include_str!("../fixtures/trade_off.json");

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Level {
    Fast,
    Full,
}

impl Level {
    /// Random trials per property.
    pub fn trials(self) -> usize {
        match self {
            Level::Fast => 50,
            Level::Full => 1000,
        }
    }
}

/// One checklist line.
#[derive(Debug, Clone)]
pub struct Check {
    pub name: &'static str,
    pub pass: bool,
    pub detail: String,
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}] {:<28} {}", if self.pass { "PASS" } else { "FAIL" }, self.name, self.detail)
    }
}

type CheckFn = Box<dyn Fn() -> Check>;

/// Runs the whole checklist, printing each line as it completes.
pub fn run_checklist(level: Level, mut sink: impl FnMut(&Check)) -> Vec<Check> {
    let trials = level.trials();
    let steps: [(&str, CheckFn); 7] = [
        ("cptp", Box::new(move || cptp_suite(trials))),
        ("stinespring", Box::new(move || stinespring_suite(trials.min(200)))),
        ("gradient", Box::new(move || gradient_suite(if level == Level::Full { 50 } else { 10 }))),
        ("cayley", Box::new(move || cayley_drift(if level == Level::Full { 1000 } else { 200 }))),
        ("fidelity", Box::new(move || fidelity_axioms(trials.min(500)))),
        ("lindblad", Box::new(lindblad_order)),
        ("trade-off", Box::new(trade_off_regression)),
    ];
    let mut out = Vec::with_capacity(steps.len());
    for (label, step) in steps {
        let start = Instant::now();
        let mut check = step();
        check.detail.push_str(&format!(" ({:.0} ms)", start.elapsed().as_secs_f64() * 1e3));
        log::debug!("{label} done");
        sink(&check);
        out.push(check);
    }
    out
}

fn rng(purpose: u64) -> Prng {
    stream(VERIFY_SEED, Stream::Custom(purpose))
}

/// Mixed state `GG†/Tr(GG†)` from a `dim × rank` Ginibre matrix.
pub fn random_mixed<R: Rng + ?Sized>(dim: usize, rank: usize, rng: &mut R) -> DensityMatrix {
    let g = ComplexMatrix::from_fn(dim, rank, |_, _| complex_gaussian(rng));
    let m = g.mul_adjoint(&g);
    let tr = m.trace().re;
    DensityMatrix::new(m.scale_real(1.0 / tr)).expect("Ginibre state is a density matrix")
}

/// A valid Kraus set listed twice: `Σ k†k = 2I`, so the defect is `√d`.
pub fn planted_fault(ops: &[ComplexMatrix]) -> Vec<ComplexMatrix> {
    ops.iter().chain(ops).cloned().collect()
}

/// Worst-case CPTP diagnostics over the given Kraus sets.
#[derive(Debug, Clone, Copy, Default)]
pub struct CptpStats {
    pub max_defect: f64,
    pub max_trace_drift: f64,
    pub min_eigenvalue: f64,
}

impl CptpStats {
    pub fn pass(&self) -> bool {
        self.max_defect < CPTP_TOL && self.max_trace_drift < 1e-10 && self.min_eigenvalue >= -1e-9
    }
}

/// Completeness, trace preservation and output positivity of each set on a
/// random input state.
pub fn cptp_stats<R: Rng + ?Sized>(sets: &[Vec<ComplexMatrix>], rng: &mut R) -> CptpStats {
    let mut s = CptpStats { min_eigenvalue: f64::INFINITY, ..CptpStats::default() };
    for ops in sets {
        s.max_defect = s.max_defect.max(verify_cptp(ops, CPTP_TOL).defect);
        let dim = ops[0].cols();
        let rho = random_mixed(dim, dim, rng);
        let mut out = ComplexMatrix::zeros(dim, dim);
        for k in ops {
            out += &k.matmul(rho.mat()).mul_adjoint(k);
        }
        s.max_trace_drift = s.max_trace_drift.max((out.trace().re - 1.0).abs());
        let min = herm_eig(&out.hermitian_part()).map(|e| e.eigenvalues[0]).unwrap_or(f64::NEG_INFINITY);
        s.min_eigenvalue = s.min_eigenvalue.min(min);
    }
    s
}

fn cptp_suite(trials: usize) -> Check {
    let mut rng = rng(1);
    let mut worst = CptpStats { min_eigenvalue: f64::INFINITY, ..CptpStats::default() };
    let mut pass = true;
    for dim in [2, 4, 8] {
        let sets: Vec<_> = (0..trials)
            .map(|_| {
                let k = rng.random_range(1..=4);
                haar_random_channel(dim, k, &mut rng).expect("valid shape").ops().to_vec()
            })
            .collect();
        let s = cptp_stats(&sets, &mut rng);
        pass &= s.pass();
        worst.max_defect = worst.max_defect.max(s.max_defect);
        worst.max_trace_drift = worst.max_trace_drift.max(s.max_trace_drift);
        worst.min_eigenvalue = worst.min_eigenvalue.min(s.min_eigenvalue);
    }
    Check {
        name: "CPTP suite (d=2,4,8)",
        pass,
        detail: format!(
            "{trials}/dim: defect {:.1e}, trace drift {:.1e}, min eig {:.1e}",
            worst.max_defect, worst.max_trace_drift, worst.min_eigenvalue
        ),
    }
}

fn stinespring_suite(pairs: usize) -> Check {
    let mut rng = rng(2);
    let (mut worst, mut unitarity) = (0.0f64, 0.0f64);
    for _ in 0..pairs {
        let n = rng.random_range(1..=2);
        let dim = 1usize << n;
        let ch = haar_random_channel(dim, rng.random_range(1..=4), &mut rng).expect("valid shape");
        let rho = random_mixed(dim, rng.random_range(1..=dim), &mut rng);
        let u = stinespring_unitary(&ch);
        unitarity = unitarity.max(u.adjoint_mul(&u).distance(&ComplexMatrix::identity(u.rows())));
        let dilated = stinespring_apply(&ch, &rho).expect("dims match");
        let direct = apply(&Channel::from(ch), &rho).expect("dims match");
        worst = worst.max(dilated.mat().distance(direct.mat()));
    }
    Check {
        name: "Stinespring = Kraus",
        pass: worst < 1e-9 && unitarity < 1e-9,
        detail: format!("{pairs} pairs: max deviation {worst:.1e}, dilation unitarity {unitarity:.1e}"),
    }
}

fn gradient_suite(configs: usize) -> Check {
    let mut rng = rng(3);
    let mut worst = 0.0f64;
    for _ in 0..configs {
        let n = rng.random_range(1..=2);
        let l_f = rng.random_range(1..=3);
        let k_f = rng.random_range(1..=3);
        let k_b = rng.random_range(1..=3);
        let psi = random_pure_state(n, &mut rng).expect("n in range");
        let traj = simulate(&psi, &NoiseSchedule::new(NoiseFamily::HaarRandom, l_f, k_f, rng.random())).expect("valid schedule");
        let lambda = rng.random_range(0.01..1.0);
        for spec in [LossSpec::sqco(), LossSpec::hqto(), LossSpec::pc(lambda)] {
            let l_b = if spec == LossSpec::sqco() { l_f } else { rng.random_range(1..=3) };
            let model = init_backward(l_b, k_b, 1 << n, InitKind::Haar, &mut rng).expect("valid shape");
            let report = fd_oracle(&model, &traj, &spec, 1e-5).expect("valid problem");
            worst = worst.max(report.max_relative_deviation);
        }
    }
    Check {
        name: "gradient vs finite diff",
        pass: worst < 1e-5,
        detail: format!("{configs} configs x 3 losses: max rel deviation {worst:.1e}"),
    }
}

fn cayley_drift(updates: usize) -> Check {
    let mut rng = rng(4);
    let mut worst = 0.0f64;
    let mut reprojections = 0;
    for (dim, k) in [(2, 3), (4, 2), (8, 2)] {
        let mut point = StiefelPoint::random(dim, k, &mut rng);
        for _ in 0..updates {
            let g = ComplexMatrix::from_fn(dim * k, dim, |_, _| complex_gaussian(&mut rng));
            let step = cayley_update(&point, &g, rng.random_range(0.01..1.0)).expect("shapes match");
            reprojections += usize::from(step.reprojected);
            point = step.point;
        }
        worst = worst.max(point.defect());
    }
    Check {
        name: "Cayley manifold drift",
        pass: worst < STIEFEL_TOL,
        detail: format!("{updates} updates: defect {worst:.1e}, {reprojections} reprojections"),
    }
}

fn fidelity_axioms(pairs: usize) -> Check {
    let mut rng = rng(5);
    let (mut self_err, mut sym_err, mut orth_err, mut closed_err) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for _ in 0..pairs {
        let n = rng.random_range(1..=3);
        let dim = 1usize << n;
        let a = random_mixed(dim, rng.random_range(1..=dim), &mut rng);
        let b = random_mixed(dim, rng.random_range(1..=dim), &mut rng);
        self_err = self_err.max((fidelity(&a, &a).expect("same dim") - 1.0).abs());
        sym_err = sym_err.max((uhlmann_fidelity(a.mat(), b.mat()).unwrap() - uhlmann_fidelity(b.mat(), a.mat()).unwrap()).abs());

        let psi = random_pure_state(n, &mut rng).expect("n in range");
        let phi = orthogonal_to(&psi, &mut rng);
        orth_err = orth_err.max(uhlmann_fidelity(psi.projector().mat(), phi.projector().mat()).unwrap().abs());
        let closed = b.mat().expectation(psi.amplitudes()).re;
        closed_err = closed_err.max((uhlmann_fidelity(psi.projector().mat(), b.mat()).unwrap() - closed).abs());
    }
    let worst = self_err.max(sym_err).max(orth_err).max(closed_err);
    Check {
        name: "fidelity axioms",
        pass: worst < 1e-9,
        detail: format!(
            "{pairs} pairs: |F(r,r)-1| {self_err:.1e}, asym {sym_err:.1e}, orth {orth_err:.1e}, closed form {closed_err:.1e}"
        ),
    }
}

/// Random pure state orthogonal to `psi`.
fn orthogonal_to<R: Rng + ?Sized>(psi: &PureState, rng: &mut R) -> PureState {
    let a = psi.amplitudes();
    let mut v: Vec<_> = (0..a.len()).map(|_| complex_gaussian(rng)).collect();
    let overlap: ccmqd::C64 = a.iter().zip(&v).map(|(x, y)| x.conj() * y).sum();
    for (vi, ai) in v.iter_mut().zip(a) {
        *vi -= overlap * ai;
    }
    PureState::normalized(v).expect("nonzero residual")
}

/// Raw defect ratios over `Δt, Δt/2, Δt/4`; first-order operators leave a
/// defect of exactly `Δt²‖H̃†H̃‖`, so each ratio is 4.
fn lindblad_order() -> Check {
    let mut ratios = Vec::new();
    for n in 1..=2 {
        let defects: Vec<f64> = [0.1, 0.05, 0.025]
            .iter()
            .map(|&dt| verify_cptp(&lindblad_raw_ops(&thermal_lindblad_spec(n, 1.0, 1.0, dt)).expect("valid spec"), CPTP_TOL).defect)
            .collect();
        ratios.extend(defects.windows(2).map(|w| w[0] / w[1]));
    }
    let pass = ratios.iter().all(|r| (r / 4.0 - 1.0).abs() < 0.2);
    Check {
        name: "Lindblad step order",
        pass,
        detail: format!("defect ratios per halving {:?}", ratios.iter().map(|r| format!("{r:.3}")).collect::<Vec<_>>()),
    }
}

/// Outcome of the stored trade-off regression run.
#[derive(Debug, Clone)]
pub struct TradeOff {
    pub final_fidelity: f64,
    /// Intermediate steps whose fidelity both rose and fell during training.
    pub non_monotone: Vec<usize>,
    /// Intermediate steps that ended below their starting fidelity.
    pub ended_lower: Vec<usize>,
}

pub fn trade_off_config() -> TrainConfig {
    let cfg: ExperimentConfig = serde_json::from_str(TRADE_OFF_FIXTURE).expect("fixture parses");
    TrainConfig { record_curves: true, ..cfg.experiment }
}

pub fn trade_off_run() -> ccmqd::Result<TradeOff> {
    let cfg = trade_off_config();
    let result = run_experiment(&cfg)?;
    let run = result.runs.first().ok_or_else(|| ccmqd::Error::InvalidParameter("regression seed failed".into()))?;
    let curve = |t: usize| run.fidelity_curves.iter().map(move |row| row[t]);
    let steps = 1..cfg.backward_depth;
    let non_monotone = steps
        .clone()
        .filter(|&t| {
            let c: Vec<f64> = curve(t).collect();
            c.windows(2).any(|w| w[1] > w[0]) && c.windows(2).any(|w| w[1] < w[0])
        })
        .collect();
    let ended_lower = steps.filter(|&t| curve(t).next_back() < curve(t).next()).collect();
    Ok(TradeOff { final_fidelity: run.final_fidelity, non_monotone, ended_lower })
}

fn trade_off_regression() -> Check {
    match trade_off_run() {
        Ok(t) => Check {
            name: "intermediate trade-off",
            pass: !t.non_monotone.is_empty() && !t.ended_lower.is_empty() && t.final_fidelity > 0.99,
            detail: format!(
                "F0 {:.6}, non-monotone steps {:?}, ended below start {:?}",
                t.final_fidelity, t.non_monotone, t.ended_lower
            ),
        },
        Err(e) => Check { name: "intermediate trade-off", pass: false, detail: e.to_string() },
    }
}
