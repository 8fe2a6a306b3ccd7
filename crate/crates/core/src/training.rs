//! Training strategies and multi-seed experiments.
//!
//! SQCO optimises every backward block against its own forward step; HQTO
//! optimises all blocks jointly against the end-to-end (optionally
//! path-constrained) loss. Both use Cayley steps with backtracking.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channels::NoiseSchedule;
use crate::diffusion::{near_mixed_check, simulate, Trajectory, NEAR_MIXED_EPS};
use crate::error::{Error, Result};
use crate::linalg::ComplexMatrix;
use crate::loss::{LossKind, LossProblem, LossSpec};
use crate::rng::{stream, Prng, Stream};
use crate::state::{fidelity, DensityMatrix, TargetKind, MAX_QUBITS};
use crate::stiefel::{apply_backward, cayley_update, init_backward, BackwardModel, InitKind, ModelCheckpoint, StiefelPoint};

pub use crate::loss::{align_index, pc_loss};

/// Step-size halvings tried before an iteration is declared stalled.
pub const MAX_HALVINGS: usize = 20;

fn default_max_iters() -> usize {
    2000
}
fn default_eps() -> f64 {
    1e-9
}
fn default_tau0() -> f64 {
    0.05
}
fn default_tau_max() -> f64 {
    1.0
}
fn default_true() -> bool {
    true
}

/// Everything a training run needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub n_qubits: usize,
    pub schedule: NoiseSchedule,
    #[serde(rename = "L_b")]
    pub backward_depth: usize,
    #[serde(rename = "K_b")]
    pub backward_kraus: usize,
    pub loss: LossSpec,
    #[serde(default)]
    pub target: TargetKind,
    #[serde(default)]
    pub init: InitKind,
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
    /// Stop once an accepted step lowers the loss by less than this.
    #[serde(default = "default_eps")]
    pub convergence_eps: f64,
    /// First trial step size.
    #[serde(default = "default_tau0")]
    pub tau0: f64,
    /// Cap on the step size after growth.
    #[serde(default = "default_tau_max")]
    pub tau_max: f64,
    pub seeds: Vec<u64>,
    /// Record loss and per-step fidelity after every accepted step.
    #[serde(default = "default_true")]
    pub record_curves: bool,
    /// Keep forward/backward states and the trained model in the result.
    #[serde(default)]
    pub record_states: bool,
}

impl TrainConfig {
    /// Defaults everywhere except the problem shape and loss.
    pub fn new(n_qubits: usize, schedule: NoiseSchedule, backward_depth: usize, backward_kraus: usize, loss: LossSpec) -> Self {
        Self {
            n_qubits,
            schedule,
            backward_depth,
            backward_kraus,
            loss,
            target: TargetKind::default(),
            init: InitKind::default(),
            max_iters: default_max_iters(),
            convergence_eps: default_eps(),
            tau0: default_tau0(),
            tau_max: default_tau_max(),
            seeds: vec![0],
            record_curves: true,
            record_states: false,
        }
    }

    pub fn dim(&self) -> usize {
        1 << self.n_qubits
    }

    pub fn strategy(&self) -> Strategy {
        Strategy::of(&self.loss)
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=MAX_QUBITS).contains(&self.n_qubits) {
            return Err(Error::InvalidParameter(format!("n_qubits {} outside 1..={MAX_QUBITS}", self.n_qubits)));
        }
        self.schedule.validate()?;
        if self.backward_depth == 0 || self.backward_kraus == 0 {
            return Err(Error::InvalidParameter("L_b and K_b must be >= 1".into()));
        }
        self.loss.validate(self.backward_depth)?;
        if self.loss.kind == LossKind::SqcoStep && self.backward_depth != self.schedule.depth {
            return Err(Error::InvalidParameter(format!(
                "SQCO needs L_b = L_f, got L_b={} and L_f={}",
                self.backward_depth, self.schedule.depth
            )));
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidParameter("max_iters must be >= 1".into()));
        }
        if !(self.convergence_eps > 0.0) {
            return Err(Error::InvalidParameter("convergence_eps must be > 0".into()));
        }
        if !(self.tau0 > 0.0) || !(self.tau_max >= self.tau0) {
            return Err(Error::InvalidParameter("need 0 < tau0 <= tau_max".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::InvalidParameter("at least one seed is required".into()));
        }
        Ok(())
    }
}

/// Training strategy, implied by the loss kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Sqco,
    Hqto,
}

impl Strategy {
    pub fn of(loss: &LossSpec) -> Self {
        match loss.kind {
            LossKind::SqcoStep => Strategy::Sqco,
            LossKind::Hqto | LossKind::Pc => Strategy::Hqto,
        }
    }

    /// Table label: `SQCO`, `HQTO` or `HQTO+PC`.
    pub fn label(loss: &LossSpec) -> &'static str {
        match loss.kind {
            LossKind::SqcoStep => "SQCO",
            LossKind::Hqto => "HQTO",
            LossKind::Pc => "HQTO+PC",
        }
    }
}

/// Why a training loop ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Converged,
    MaxIters,
    /// No step size down to `τ·2^-20` decreased the loss.
    Stalled,
}

/// States kept for export.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateRecord {
    /// `ρ_0 … ρ_{L_f}`.
    pub forward: Vec<DensityMatrix>,
    /// `ρ̂_0 … ρ̂_{L_b}`, indexed by backward step.
    pub backward: Vec<DensityMatrix>,
}

/// Outcome of one seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    /// `F(ρ_0, ρ̂_0)` of the trained chain.
    pub final_fidelity: f64,
    /// Accepted updates.
    pub iterations: usize,
    pub stop: StopReason,
    /// Loss before training and after every accepted update.
    pub loss_curve: Vec<f64>,
    /// Row `i` holds `F(ρ_{align(t)}, ρ̂_t)` for `t = 0..=L_b` at `loss_curve[i]`.
    pub fidelity_curves: Vec<Vec<f64>>,
    /// SQCO only: converged local fidelities `F(ρ_{t−1}, Φ_t(ρ_t))`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step_fidelities: Option<Vec<f64>>,
    /// `‖ρ_{L_f} − I/d‖_F`.
    pub near_mixed_residual: f64,
    pub near_mixed: bool,
    /// Cayley steps that needed the polar fallback.
    pub reprojections: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub states: Option<StateRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelCheckpoint>,
}

/// A seed whose training aborted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedFailure {
    pub seed: u64,
    pub error: String,
}

/// Aggregate over all configured seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub config: TrainConfig,
    pub strategy: String,
    pub runs: Vec<SeedResult>,
    pub failures: Vec<SeedFailure>,
    pub mean_fidelity: f64,
    /// Sample standard deviation; 0 for a single completed seed.
    pub std_fidelity: f64,
    pub single_sample: bool,
    /// Some seeds failed; statistics cover only `runs`.
    pub partial: bool,
    pub mean_iterations: f64,
    pub wall_time_s: f64,
}

impl RunResult {
    pub fn final_fidelities(&self) -> Vec<f64> {
        self.runs.iter().map(|r| r.final_fidelity).collect()
    }
}

/// Mean and sample standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

struct Accepted {
    points: Vec<StiefelPoint>,
    loss: f64,
    tau: f64,
    reprojections: usize,
}

/// Tries `τ, τ/2, …` until the Cayley step lowers `current`.
fn backtrack(
    points: &[StiefelPoint],
    grads: &[ComplexMatrix],
    tau: f64,
    current: f64,
    eval: impl Fn(&[StiefelPoint]) -> Result<f64>,
) -> Option<Accepted> {
    let mut tau = tau;
    for _ in 0..=MAX_HALVINGS {
        let mut reprojections = 0;
        let candidate: Result<Vec<StiefelPoint>> = points
            .iter()
            .zip(grads)
            .map(|(p, g)| {
                let step = cayley_update(p, g, tau)?;
                reprojections += usize::from(step.reprojected);
                Ok(step.point)
            })
            .collect();
        match candidate.and_then(|c| eval(&c).map(|l| (c, l))) {
            Ok((points, loss)) if loss < current => return Some(Accepted { points, loss, tau, reprojections }),
            Ok(_) => {}
            Err(e) => log::debug!("step with tau={tau:e} rejected: {e}"),
        }
        tau *= 0.5;
    }
    None
}

/// Loss curve bookkeeping shared by both strategies.
struct Recorder<'a> {
    problem: &'a LossProblem,
    enabled: bool,
    losses: Vec<f64>,
    fidelities: Vec<Vec<f64>>,
}

impl<'a> Recorder<'a> {
    fn new(problem: &'a LossProblem, enabled: bool) -> Self {
        Self { problem, enabled, losses: Vec::new(), fidelities: Vec::new() }
    }

    fn record(&mut self, model: &BackwardModel, loss: f64) -> Result<()> {
        if self.enabled {
            let mats = model.apply_raw(self.problem_input());
            self.losses.push(loss);
            self.fidelities.push(self.problem.chain_fidelities(&mats)?);
        }
        Ok(())
    }

    fn problem_input(&self) -> &ComplexMatrix {
        self.problem.input()
    }
}

/// Trains all blocks jointly on the HQTO or PC loss.
pub fn train_hqto(traj: &Trajectory, cfg: &TrainConfig, rng: &mut Prng) -> Result<(BackwardModel, SeedResult)> {
    if Strategy::of(&cfg.loss) != Strategy::Hqto {
        return Err(Error::InvalidParameter("train_hqto needs an hqto or pc loss".into()));
    }
    let problem = LossProblem::new(traj, &cfg.loss, cfg.backward_depth)?;
    let mut model = init_backward(cfg.backward_depth, cfg.backward_kraus, traj.dim(), cfg.init, rng)?;
    let mut rec = Recorder::new(&problem, cfg.record_curves);
    let mut loss = problem.evaluate(&model, false)?.loss;
    rec.record(&model, loss)?;

    let mut tau = cfg.tau0;
    let mut iterations = 0;
    let mut reprojections = 0;
    let mut stop = StopReason::MaxIters;
    while iterations < cfg.max_iters {
        let (_, grads) = problem.gradient(&model).map_err(|e| Error::TrainingAborted(format!("gradient failed: {e}")))?;
        let eval = |pts: &[StiefelPoint]| {
            let kappas: Vec<ComplexMatrix> = pts.iter().map(|p| p.kappa().clone()).collect();
            Ok(problem.evaluate_stacks(&kappas, false)?.loss)
        };
        let Some(step) = backtrack(model.blocks(), &grads, tau, loss, eval) else {
            stop = StopReason::Stalled;
            break;
        };
        model = BackwardModel::from_blocks(step.points)?;
        let delta = loss - step.loss;
        loss = step.loss;
        tau = (2.0 * step.tau).min(cfg.tau_max);
        reprojections += step.reprojections;
        iterations += 1;
        rec.record(&model, loss)?;
        if delta < cfg.convergence_eps {
            stop = StopReason::Converged;
            break;
        }
    }
    finish(traj, cfg, model, rec, iterations, stop, reprojections, None)
}

/// Trains every block against its own forward step, then composes them.
pub fn train_sqco(traj: &Trajectory, cfg: &TrainConfig, rng: &mut Prng) -> Result<(BackwardModel, SeedResult)> {
    if Strategy::of(&cfg.loss) != Strategy::Sqco {
        return Err(Error::InvalidParameter("train_sqco needs a sqco_step loss".into()));
    }
    if cfg.backward_depth != traj.depth() {
        return Err(Error::InvalidParameter(format!(
            "SQCO needs L_b = L_f, got L_b={} and L_f={}",
            cfg.backward_depth,
            traj.depth()
        )));
    }
    let problem = LossProblem::new(traj, &cfg.loss, cfg.backward_depth)?;
    let mut model = init_backward(cfg.backward_depth, cfg.backward_kraus, traj.dim(), cfg.init, rng)?;
    let depth = model.depth();
    let mut local: Vec<f64> = (1..=depth)
        .map(|t| problem.local_loss(t, model.step(t).kappa()).map(|l| l.0))
        .collect::<Result<_>>()?;
    let mut taus = vec![cfg.tau0; depth];
    let mut active = vec![true; depth];
    let mut rec = Recorder::new(&problem, cfg.record_curves);
    rec.record(&model, local.iter().sum::<f64>() / depth as f64)?;

    let mut iterations = 0;
    let mut reprojections = 0;
    while iterations < cfg.max_iters && active.iter().any(|&a| a) {
        let mut moved = false;
        for t in 1..=depth {
            if !active[t - 1] {
                continue;
            }
            let kappa = model.step(t).kappa().clone();
            let (_, _, grad) = problem
                .local_gradient(t, &kappa)
                .map_err(|e| Error::TrainingAborted(format!("step {t} gradient failed: {e}")))?;
            let eval = |pts: &[StiefelPoint]| Ok(problem.local_loss(t, pts[0].kappa())?.0);
            let point = model.step(t).clone();
            match backtrack(std::slice::from_ref(&point), std::slice::from_ref(&grad), taus[t - 1], local[t - 1], eval) {
                None => active[t - 1] = false,
                Some(step) => {
                    let delta = local[t - 1] - step.loss;
                    local[t - 1] = step.loss;
                    taus[t - 1] = (2.0 * step.tau).min(cfg.tau_max);
                    reprojections += step.reprojections;
                    model.set_step(t, step.points.into_iter().next().expect("one block"));
                    moved = true;
                    if delta < cfg.convergence_eps {
                        active[t - 1] = false;
                    }
                }
            }
        }
        if !moved {
            break;
        }
        iterations += 1;
        rec.record(&model, local.iter().sum::<f64>() / depth as f64)?;
    }
    let stop = if active.iter().any(|&a| a) { StopReason::MaxIters } else { StopReason::Converged };
    let step_fidelities = (1..=depth)
        .map(|t| problem.local_loss(t, model.step(t).kappa()).map(|(_, f)| f.clamp(0.0, 1.0)))
        .collect::<Result<Vec<_>>>()?;
    finish(traj, cfg, model, rec, iterations, stop, reprojections, Some(step_fidelities))
}

#[allow(clippy::too_many_arguments)]
fn finish(
    traj: &Trajectory,
    cfg: &TrainConfig,
    model: BackwardModel,
    rec: Recorder<'_>,
    iterations: usize,
    stop: StopReason,
    reprojections: usize,
    step_fidelities: Option<Vec<f64>>,
) -> Result<(BackwardModel, SeedResult)> {
    let backward = apply_backward(&model, traj.last())?;
    let final_fidelity = fidelity(traj.state(0), &backward[0])?;
    let near = near_mixed_check(traj, NEAR_MIXED_EPS);
    let states = cfg.record_states.then(|| StateRecord { forward: traj.states().to_vec(), backward });
    let result = SeedResult {
        seed: traj.schedule().map_or(0, |s| s.seed),
        final_fidelity,
        iterations,
        stop,
        loss_curve: rec.losses,
        fidelity_curves: rec.fidelities,
        step_fidelities,
        near_mixed_residual: near.residual,
        near_mixed: near.pass,
        reprojections,
        states,
        model: cfg.record_states.then(|| ModelCheckpoint::from(&model)),
    };
    Ok((model, result))
}

/// Target and forward trajectory of one seed.
pub fn seed_trajectory(cfg: &TrainConfig, seed: u64) -> Result<Trajectory> {
    let target = cfg.target.build(cfg.n_qubits, &mut stream(seed, Stream::Target))?;
    let schedule = NoiseSchedule { seed, ..cfg.schedule.clone() };
    simulate(&target, &schedule)
}

/// Full pipeline for one seed: target, forward pass, init, training.
pub fn run_seed(cfg: &TrainConfig, seed: u64) -> Result<(BackwardModel, SeedResult)> {
    let traj = seed_trajectory(cfg, seed)?;
    if !near_mixed_check(&traj, NEAR_MIXED_EPS).pass {
        log::info!("seed {seed}: forward pass ends {:.3} from I/d", near_mixed_check(&traj, NEAR_MIXED_EPS).residual);
    }
    let mut rng = stream(seed, Stream::Init);
    match cfg.strategy() {
        Strategy::Sqco => train_sqco(&traj, cfg, &mut rng),
        Strategy::Hqto => train_hqto(&traj, cfg, &mut rng),
    }
}

/// Runs every configured seed (in parallel, results in seed order).
pub fn run_experiment(cfg: &TrainConfig) -> Result<RunResult> {
    cfg.validate()?;
    let start = Instant::now();
    let outcomes: Vec<(u64, Result<SeedResult>)> = cfg
        .seeds
        .par_iter()
        .map(|&seed| (seed, run_seed(cfg, seed).map(|(_, r)| r)))
        .collect();
    let mut runs = Vec::new();
    let mut failures = Vec::new();
    for (seed, outcome) in outcomes {
        match outcome {
            Ok(r) => runs.push(r),
            Err(e) => {
                log::warn!("seed {seed} failed: {e}");
                failures.push(SeedFailure { seed, error: e.to_string() });
            }
        }
    }
    let fids: Vec<f64> = runs.iter().map(|r| r.final_fidelity).collect();
    let (mean_fidelity, std_fidelity) = mean_std(&fids);
    let mean_iterations = runs.iter().map(|r| r.iterations as f64).sum::<f64>() / runs.len().max(1) as f64;
    Ok(RunResult {
        config: cfg.clone(),
        strategy: Strategy::label(&cfg.loss).to_owned(),
        single_sample: runs.len() == 1,
        partial: !failures.is_empty(),
        runs,
        failures,
        mean_fidelity,
        std_fidelity,
        mean_iterations,
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channels::{Channel, KrausChannel, NoiseFamily};
    use crate::diffusion::run_forward;
    use crate::linalg::haar_unitary;
    use crate::rng::seeded;
    use crate::state::random_pure_state;

    fn unitary_traj(n: usize, depth: usize, seed: u64) -> Trajectory {
        let mut rng = seeded(seed);
        let psi = random_pure_state(n, &mut rng).unwrap();
        let chans: Vec<Channel> = (0..depth)
            .map(|_| KrausChannel::new(vec![haar_unitary(1 << n, &mut rng)]).unwrap().into())
            .collect();
        run_forward(&psi, &chans).unwrap()
    }

    #[test]
    fn sample_statistics() {
        assert_eq!(mean_std(&[0.5]), (0.5, 0.0));
        let (m, s) = mean_std(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((s - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn sqco_inverts_unitary_steps() {
        let traj = unitary_traj(1, 3, 1);
        let cfg = TrainConfig::new(1, NoiseSchedule::new(NoiseFamily::HaarRandom, 3, 1, 0), 3, 2, LossSpec::sqco());
        let (_, r) = train_sqco(&traj, &cfg, &mut seeded(1)).unwrap();
        for f in r.step_fidelities.unwrap() {
            assert!(1.0 - f < 1e-6, "local fidelity {f}");
        }
    }

    #[test]
    fn hqto_recovers_through_identity_noise() {
        let mut rng = seeded(2);
        let psi = random_pure_state(1, &mut rng).unwrap();
        let chans: Vec<Channel> = (0..4).map(|_| KrausChannel::identity(2).into()).collect();
        let traj = run_forward(&psi, &chans).unwrap();
        let cfg = TrainConfig { max_iters: 200, ..TrainConfig::new(1, NoiseSchedule::new(NoiseFamily::HaarRandom, 4, 1, 0), 4, 2, LossSpec::hqto()) };
        let (_, r) = train_hqto(&traj, &cfg, &mut rng).unwrap();
        assert!(r.final_fidelity > 1.0 - 1e-6, "{}", r.final_fidelity);
        assert!(r.iterations <= 200);
    }

    #[test]
    fn curves_are_consistent() {
        let cfg = TrainConfig {
            max_iters: 60,
            ..TrainConfig::new(1, NoiseSchedule::new(NoiseFamily::HaarRandom, 4, 2, 0), 4, 3, LossSpec::pc(0.5))
        };
        let (_, r) = run_seed(&cfg, 7).unwrap();
        assert_eq!(r.loss_curve.len(), r.iterations + 1);
        assert_eq!(r.fidelity_curves.len(), r.iterations + 1);
        assert!(r.loss_curve.windows(2).all(|w| w[1] < w[0]));
        let bound = cfg.loss.upper_bound(4);
        assert!(r.loss_curve.iter().all(|l| (0.0..=bound).contains(l)));
        assert!(r.fidelity_curves.iter().flatten().all(|f| (0.0..=1.0).contains(f)));
        let last = r.fidelity_curves.last().unwrap();
        assert!((last[0] - r.final_fidelity).abs() < 1e-12);
    }

    #[test]
    fn config_validation() {
        let base = TrainConfig::new(1, NoiseSchedule::new(NoiseFamily::HaarRandom, 4, 2, 0), 4, 3, LossSpec::hqto());
        assert!(base.validate().is_ok());
        assert!(TrainConfig { seeds: vec![], ..base.clone() }.validate().is_err());
        assert!(TrainConfig { n_qubits: 8, ..base.clone() }.validate().is_err());
        assert!(TrainConfig { convergence_eps: 0.0, ..base.clone() }.validate().is_err());
        assert!(TrainConfig { loss: LossSpec::sqco(), backward_depth: 5, ..base.clone() }.validate().is_err());
        let json = serde_json::to_string(&base).unwrap();
        assert_eq!(serde_json::from_str::<TrainConfig>(&json).unwrap(), base);
    }

    #[test]
    fn experiments_are_deterministic() {
        let cfg = TrainConfig {
            max_iters: 30,
            seeds: vec![3, 4],
            ..TrainConfig::new(1, NoiseSchedule::new(NoiseFamily::Depolarizing, 3, 4, 0), 3, 2, LossSpec::pc(0.02))
        };
        let a = run_experiment(&cfg).unwrap();
        let b = run_experiment(&cfg).unwrap();
        assert_eq!(a.runs, b.runs);
        assert_eq!(a.mean_fidelity.to_bits(), b.mean_fidelity.to_bits());
        assert_eq!(a.std_fidelity.to_bits(), b.std_fidelity.to_bits());
        assert!(!a.single_sample && !a.partial);
        let one = run_experiment(&TrainConfig { seeds: vec![3], ..cfg }).unwrap();
        assert!(one.single_sample);
        assert_eq!(one.std_fidelity, 0.0);
    }
}
