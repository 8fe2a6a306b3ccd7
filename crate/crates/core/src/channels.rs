//! Kraus channels and the forward noise families.
//!
//! A forward step is either an explicit operator-sum [`KrausChannel`] or the
//! global depolarizing map applied in closed form. Channels are immutable
//! once built and applying them is a pure function.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{
    add_sandwich, haar_isometry, kron, partial_trace_env, polar_isometry, ComplexMatrix, C64, I, ONE, ZERO,
};
use crate::rng::{stream, Stream};
use crate::state::DensityMatrix;

/// Completeness tolerance every constructed channel must meet.
pub const CPTP_TOL: f64 = 1e-9;

/// Largest raw completeness defect accepted from the Lindblad discretiser.
pub const LINDBLAD_MAX_RAW_DEFECT: f64 = 0.01;

/// Operator-sum channel `ρ ↦ Σ kᵢ ρ kᵢ†` with `Σ kᵢ†kᵢ = I`.
#[derive(Debug, Clone, PartialEq)]
pub struct KrausChannel {
    dim: usize,
    ops: Vec<ComplexMatrix>,
}

impl KrausChannel {
    /// Checks shapes and completeness at [`CPTP_TOL`].
    pub fn new(ops: Vec<ComplexMatrix>) -> Result<Self> {
        let dim = check_ops(&ops)?;
        let report = verify_cptp(&ops, CPTP_TOL);
        if !report.pass {
            return Err(Error::Incomplete { defect: report.defect, tolerance: CPTP_TOL });
        }
        Ok(Self { dim, ops })
    }

    /// Splits a `(dim·K)×dim` isometry into `K` stacked Kraus operators.
    pub fn from_stacked(stacked: &ComplexMatrix) -> Result<Self> {
        let dim = stacked.cols();
        if dim == 0 || !stacked.rows().is_multiple_of(dim) {
            return Err(Error::DimensionMismatch(format!(
                "stacked operator of shape {}x{} is not a multiple of its width",
                stacked.rows(),
                dim
            )));
        }
        let k = stacked.rows() / dim;
        Self::new((0..k).map(|i| stacked.row_block(i * dim, dim)).collect())
    }

    pub fn identity(dim: usize) -> Self {
        Self { dim, ops: vec![ComplexMatrix::identity(dim)] }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn kraus_count(&self) -> usize {
        self.ops.len()
    }

    pub fn ops(&self) -> &[ComplexMatrix] {
        &self.ops
    }

    /// Operators stacked vertically into a `(dim·K)×dim` matrix.
    pub fn stacked(&self) -> ComplexMatrix {
        ComplexMatrix::vstack(&self.ops)
    }

    /// Unnormalised operator sum on an arbitrary square matrix.
    pub fn apply_raw(&self, rho: &ComplexMatrix) -> ComplexMatrix {
        let mut out = ComplexMatrix::zeros(self.dim, self.dim);
        for k in &self.ops {
            add_sandwich(&mut out, k, rho);
        }
        out
    }

    /// Adjoint map `X ↦ Σ kᵢ† X kᵢ`.
    pub fn apply_adjoint_raw(&self, x: &ComplexMatrix) -> ComplexMatrix {
        let mut out = ComplexMatrix::zeros(self.dim, self.dim);
        for k in &self.ops {
            out += &k.adjoint_mul(&x.matmul(k));
        }
        out
    }
}

fn check_ops(ops: &[ComplexMatrix]) -> Result<usize> {
    let first = ops.first().ok_or_else(|| Error::InvalidParameter("channel needs at least one operator".into()))?;
    let dim = first.ensure_square()?;
    if ops.iter().any(|k| k.rows() != dim || k.cols() != dim) {
        return Err(Error::DimensionMismatch("Kraus operators must share one square shape".into()));
    }
    Ok(dim)
}

/// Global depolarizing map `ρ ↦ (1−p)ρ + p·I/dim`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DepolarizingChannel {
    dim: usize,
    p: f64,
}

impl DepolarizingChannel {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn strength(&self) -> f64 {
        self.p
    }

    pub fn apply_raw(&self, rho: &ComplexMatrix) -> ComplexMatrix {
        let tr = rho.trace();
        let mut out = rho.scale_real(1.0 - self.p);
        let shift = tr * (self.p / self.dim as f64);
        for i in 0..self.dim {
            out[(i, i)] += shift;
        }
        out
    }

    /// Operator-sum form over the `dim²` Weyl operators `XᵃZᵇ`.
    pub fn to_kraus(&self) -> KrausChannel {
        let d = self.dim;
        let d2 = (d * d) as f64;
        let mut ops = Vec::with_capacity(d * d);
        for a in 0..d {
            for b in 0..d {
                let w = if a == 0 && b == 0 { 1.0 - self.p + self.p / d2 } else { self.p / d2 };
                ops.push(weyl(d, a, b).scale_real(w.sqrt()));
            }
        }
        KrausChannel { dim: d, ops }
    }
}

/// Generalised Pauli `X^a Z^b` on `d` levels.
fn weyl(d: usize, a: usize, b: usize) -> ComplexMatrix {
    let mut m = ComplexMatrix::zeros(d, d);
    for j in 0..d {
        let phase = 2.0 * std::f64::consts::PI * (b * j) as f64 / d as f64;
        m[((j + a) % d, j)] = C64::from_polar(1.0, phase);
    }
    m
}

/// Builds a depolarizing map of strength `p ∈ [0, 1]`.
pub fn depolarizing_channel(dim: usize, p: f64) -> Result<DepolarizingChannel> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidParameter(format!("depolarizing strength {p} outside [0, 1]")));
    }
    if dim == 0 {
        return Err(Error::InvalidParameter("dimension must be positive".into()));
    }
    Ok(DepolarizingChannel { dim, p })
}

/// A single forward step.
#[derive(Debug, Clone, PartialEq)]
pub enum Channel {
    Kraus(KrausChannel),
    Depolarizing(DepolarizingChannel),
}

impl Channel {
    pub fn dim(&self) -> usize {
        match self {
            Channel::Kraus(k) => k.dim(),
            Channel::Depolarizing(d) => d.dim(),
        }
    }

    pub fn apply_raw(&self, rho: &ComplexMatrix) -> ComplexMatrix {
        match self {
            Channel::Kraus(k) => k.apply_raw(rho),
            Channel::Depolarizing(d) => d.apply_raw(rho),
        }
    }

    /// Kraus form; depolarizing maps are materialised.
    pub fn to_kraus(&self) -> KrausChannel {
        match self {
            Channel::Kraus(k) => k.clone(),
            Channel::Depolarizing(d) => d.to_kraus(),
        }
    }
}

impl From<KrausChannel> for Channel {
    fn from(k: KrausChannel) -> Self {
        Channel::Kraus(k)
    }
}

impl From<DepolarizingChannel> for Channel {
    fn from(d: DepolarizingChannel) -> Self {
        Channel::Depolarizing(d)
    }
}

/// Applies a channel and re-normalises the output state.
pub fn apply(ch: &Channel, rho: &DensityMatrix) -> Result<DensityMatrix> {
    if ch.dim() != rho.dim() {
        return Err(Error::DimensionMismatch(format!("channel dim {} vs state dim {}", ch.dim(), rho.dim())));
    }
    Ok(DensityMatrix::from_channel_output(ch.apply_raw(rho.mat()))?.0)
}

/// Outcome of a completeness check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CptpReport {
    /// `‖Σ kᵢ†kᵢ − I‖_F`.
    pub defect: f64,
    pub pass: bool,
}

/// Completeness defect of an operator list; passes iff below `tol`.
pub fn verify_cptp(ops: &[ComplexMatrix], tol: f64) -> CptpReport {
    let Some(first) = ops.first() else {
        return CptpReport { defect: f64::INFINITY, pass: false };
    };
    let dim = first.cols();
    if ops.iter().any(|k| k.rows() != dim || k.cols() != dim) {
        return CptpReport { defect: f64::INFINITY, pass: false };
    }
    let mut gram = ComplexMatrix::zeros(dim, dim);
    for k in ops {
        gram += &k.adjoint_mul(k);
    }
    let defect = gram.distance(&ComplexMatrix::identity(dim));
    CptpReport { defect, pass: defect < tol }
}

/// Haar-random channel with `k` Kraus operators: the first `dim` columns of
/// a Haar unitary on `dim·k` levels, cut into `k` square blocks.
pub fn haar_random_channel<R: Rng + ?Sized>(dim: usize, k: usize, rng: &mut R) -> Result<KrausChannel> {
    if dim == 0 || k == 0 {
        return Err(Error::InvalidParameter("haar channel needs dim >= 1 and K >= 1".into()));
    }
    let v = haar_isometry(dim * k, dim, rng);
    KrausChannel::from_stacked(&v)
}

/// Markovian generator data for one discretised step.
#[derive(Debug, Clone)]
pub struct LindbladSpec {
    pub hamiltonian: ComplexMatrix,
    pub jump_ops: Vec<ComplexMatrix>,
    pub dt: f64,
}

/// Discretised Lindblad step plus its completeness diagnostics.
#[derive(Debug, Clone)]
pub struct LindbladStep {
    pub channel: KrausChannel,
    /// Defect of the first-order operators before projection.
    pub raw_defect: f64,
    /// Defect after projection onto the nearest isometry.
    pub projected_defect: f64,
}

/// First-order operators `k₀ = I − iH̃Δt`, `kⱼ = Γⱼ√Δt` with
/// `H̃ = H − (i/2)ΣΓ†Γ`, before any projection.
pub fn lindblad_raw_ops(spec: &LindbladSpec) -> Result<Vec<ComplexMatrix>> {
    let dim = spec.hamiltonian.ensure_square()?;
    if !(spec.dt > 0.0) || !spec.dt.is_finite() {
        return Err(Error::InvalidParameter(format!("time step {} must be positive", spec.dt)));
    }
    let herm = spec.hamiltonian.hermiticity_defect();
    if herm > 1e-9 {
        return Err(Error::InvalidParameter(format!("Hamiltonian is not Hermitian (defect {herm:e})")));
    }
    if spec.jump_ops.iter().any(|g| g.rows() != dim || g.cols() != dim) {
        return Err(Error::DimensionMismatch("jump operators must match the Hamiltonian".into()));
    }
    let mut decay = ComplexMatrix::zeros(dim, dim);
    for g in &spec.jump_ops {
        decay += &g.adjoint_mul(g);
    }
    let mut h_eff = spec.hamiltonian.clone();
    h_eff.axpy(C64::new(0.0, -0.5), &decay);
    let mut k0 = ComplexMatrix::identity(dim);
    k0.axpy(-I * spec.dt, &h_eff);
    let mut ops = vec![k0];
    let s = spec.dt.sqrt();
    ops.extend(spec.jump_ops.iter().map(|g| g.scale_real(s)));
    Ok(ops)
}

/// One-step Lindblad channel, projected to exact completeness.
pub fn lindblad_step_channel(spec: &LindbladSpec) -> Result<LindbladStep> {
    let raw = lindblad_raw_ops(spec)?;
    let raw_defect = verify_cptp(&raw, 0.0).defect;
    if raw_defect > LINDBLAD_MAX_RAW_DEFECT {
        return Err(Error::InvalidParameter(format!(
            "raw completeness defect {raw_defect:e} exceeds {LINDBLAD_MAX_RAW_DEFECT}; shrink dt"
        )));
    }
    let stacked = polar_isometry(&ComplexMatrix::vstack(&raw))?;
    let channel = KrausChannel::from_stacked(&stacked)?;
    let projected_defect = verify_cptp(channel.ops(), 0.0).defect;
    Ok(LindbladStep { channel, raw_defect, projected_defect })
}

/// Operator `op` acting on qubit `q` of an `n`-qubit register (qubit 0 most significant).
pub fn embed_single_qubit(op: &ComplexMatrix, q: usize, n: usize) -> ComplexMatrix {
    let left = ComplexMatrix::identity(1 << q);
    let right = ComplexMatrix::identity(1 << (n - q - 1));
    kron(&kron(&left, op), &right)
}

/// Infinite-temperature relaxation on every qubit: jump operators `√γ σ₋`,
/// `√γ σ₊` per qubit and `H = (ω/2) Σ σ_z`. Drives any state toward `I/d`.
pub fn thermal_lindblad_spec(n_qubits: usize, gamma: f64, omega: f64, dt: f64) -> LindbladSpec {
    let sigma_minus = ComplexMatrix::from_rows(&[vec![ZERO, ONE], vec![ZERO, ZERO]]);
    let sigma_plus = sigma_minus.adjoint();
    let sigma_z = ComplexMatrix::from_real_diag(&[1.0, -1.0]);
    let dim = 1usize << n_qubits;
    let mut hamiltonian = ComplexMatrix::zeros(dim, dim);
    let mut jump_ops = Vec::with_capacity(2 * n_qubits);
    let rate = gamma.max(0.0).sqrt();
    for q in 0..n_qubits {
        hamiltonian.axpy(C64::new(omega / 2.0, 0.0), &embed_single_qubit(&sigma_z, q, n_qubits));
        jump_ops.push(embed_single_qubit(&sigma_minus, q, n_qubits).scale_real(rate));
        jump_ops.push(embed_single_qubit(&sigma_plus, q, n_qubits).scale_real(rate));
    }
    LindbladSpec { hamiltonian, jump_ops, dt }
}

/// Evolves `ρ ⊗ |e₀⟩⟨e₀|` under a unitary dilation of the channel and traces
/// out the `K`-level environment.
pub fn stinespring_apply(ch: &KrausChannel, rho: &DensityMatrix) -> Result<DensityMatrix> {
    let d = ch.dim();
    if rho.dim() != d {
        return Err(Error::DimensionMismatch(format!("channel dim {d} vs state dim {}", rho.dim())));
    }
    let u = stinespring_unitary(ch);
    let k = ch.kraus_count();
    let mut env0 = ComplexMatrix::zeros(k, k);
    env0[(0, 0)] = ONE;
    let joint = kron(rho.mat(), &env0);
    let evolved = u.matmul(&joint).mul_adjoint(&u);
    let reduced = partial_trace_env(&evolved, d, k)?;
    Ok(DensityMatrix::from_channel_output(reduced)?.0)
}

/// Unitary on system ⊗ environment (system index major) whose `|e₀⟩`
/// columns hold the Kraus operators; the remaining columns are completed by
/// Gram-Schmidt over the standard basis in ascending order.
pub fn stinespring_unitary(ch: &KrausChannel) -> ComplexMatrix {
    let d = ch.dim();
    let k = ch.kraus_count();
    let n = d * k;
    let mut cols: Vec<Option<Vec<C64>>> = vec![None; n];
    for s in 0..d {
        let mut col = vec![ZERO; n];
        for (i, op) in ch.ops().iter().enumerate() {
            for sp in 0..d {
                col[sp * k + i] = op[(sp, s)];
            }
        }
        cols[s * k] = Some(col);
    }
    let mut basis: Vec<Vec<C64>> = cols.iter().flatten().cloned().collect();
    let mut candidates = 0..n;
    for slot in cols.iter_mut() {
        if slot.is_some() {
            continue;
        }
        for j in candidates.by_ref() {
            let mut v = vec![ZERO; n];
            v[j] = ONE;
            for _ in 0..2 {
                for b in &basis {
                    let proj: C64 = b.iter().zip(&v).map(|(x, y)| x.conj() * y).sum();
                    for (vi, bi) in v.iter_mut().zip(b) {
                        *vi -= proj * bi;
                    }
                }
            }
            let norm = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
            if norm > 1e-6 {
                let v: Vec<C64> = v.into_iter().map(|z| z / norm).collect();
                basis.push(v.clone());
                *slot = Some(v);
                break;
            }
        }
    }
    ComplexMatrix::from_fn(n, n, |r, c| cols[c].as_ref().expect("isometry completion ran out of candidates")[r])
}

/// Forward noise family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseFamily {
    Depolarizing,
    HaarRandom,
    Lindblad,
}

impl NoiseFamily {
    pub fn as_str(self) -> &'static str {
        match self {
            NoiseFamily::Depolarizing => "depolarizing",
            NoiseFamily::HaarRandom => "haar_random",
            NoiseFamily::Lindblad => "lindblad",
        }
    }
}

impl fmt::Display for NoiseFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for NoiseFamily {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "depolarizing" => Ok(NoiseFamily::Depolarizing),
            "haar_random" | "random" => Ok(NoiseFamily::HaarRandom),
            "lindblad" => Ok(NoiseFamily::Lindblad),
            other => Err(Error::InvalidParameter(format!("unknown noise family `{other}`"))),
        }
    }
}

fn default_p_max() -> f64 {
    0.8
}
fn default_gamma() -> f64 {
    1.0
}
fn default_omega() -> f64 {
    1.0
}
fn default_dt() -> f64 {
    0.05
}

/// Forward diffusion schedule `(L_f, K_f)` plus family parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSchedule {
    pub family: NoiseFamily,
    /// Diffusion depth `L_f`.
    #[serde(rename = "L_f")]
    pub depth: usize,
    /// Kraus operators per step `K_f`; only the Haar family honours it.
    #[serde(rename = "K_f")]
    pub kraus_count: usize,
    /// Final strength of the linear depolarizing ramp `p_t = p_max·t/L_f`.
    #[serde(default = "default_p_max")]
    pub p_max: f64,
    /// Lindblad relaxation rate.
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    /// Lindblad qubit splitting.
    #[serde(default = "default_omega")]
    pub omega: f64,
    /// Lindblad time step.
    #[serde(default = "default_dt")]
    pub dt: f64,
    /// Seed of the forward stream. Experiments overwrite it with the run seed.
    #[serde(default)]
    pub seed: u64,
}

impl NoiseSchedule {
    pub fn new(family: NoiseFamily, depth: usize, kraus_count: usize, seed: u64) -> Self {
        Self {
            family,
            depth,
            kraus_count,
            p_max: default_p_max(),
            gamma: default_gamma(),
            omega: default_omega(),
            dt: default_dt(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 || self.kraus_count == 0 {
            return Err(Error::InvalidParameter("noise schedule needs L_f >= 1 and K_f >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.p_max) {
            return Err(Error::InvalidParameter(format!("p_max {} outside [0, 1]", self.p_max)));
        }
        Ok(())
    }

    /// Depolarizing strength at step `t ∈ 1..=L_f`.
    pub fn ramp(&self, t: usize) -> f64 {
        self.p_max * t as f64 / self.depth as f64
    }
}

/// The `L_f` forward channels of a schedule, deterministic in its seed.
pub fn build_forward_sequence(schedule: &NoiseSchedule, dim: usize) -> Result<Vec<Channel>> {
    schedule.validate()?;
    if dim == 0 || !dim.is_power_of_two() {
        return Err(Error::InvalidParameter(format!("dimension {dim} is not a power of two")));
    }
    let mut rng = stream(schedule.seed, Stream::Forward);
    (1..=schedule.depth)
        .map(|t| match schedule.family {
            NoiseFamily::Depolarizing => Ok(depolarizing_channel(dim, schedule.ramp(t))?.into()),
            NoiseFamily::HaarRandom => Ok(haar_random_channel(dim, schedule.kraus_count, &mut rng)?.into()),
            NoiseFamily::Lindblad => {
                let n = dim.trailing_zeros() as usize;
                let spec = thermal_lindblad_spec(n, schedule.gamma, schedule.omega, schedule.dt);
                Ok(lindblad_step_channel(&spec)?.channel.into())
            }
        })
        .collect()
}

/// Persisted channel: operators as row-major `[re, im]` pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelRecord {
    pub dim: usize,
    pub family: String,
    pub seed: u64,
    /// Depolarizing strength; present only for closed-form depolarizing steps.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
    pub ops: Vec<Vec<[f64; 2]>>,
}

pub fn matrix_to_pairs(m: &ComplexMatrix) -> Vec<[f64; 2]> {
    m.data().iter().map(|z| [z.re, z.im]).collect()
}

pub fn pairs_to_matrix(rows: usize, cols: usize, pairs: &[[f64; 2]]) -> Result<ComplexMatrix> {
    ComplexMatrix::new(rows, cols, pairs.iter().map(|p| C64::new(p[0], p[1])).collect())
}

impl ChannelRecord {
    pub fn from_channel(ch: &Channel, family: NoiseFamily, seed: u64) -> Self {
        match ch {
            Channel::Kraus(k) => Self {
                dim: k.dim(),
                family: family.as_str().to_owned(),
                seed,
                p: None,
                ops: k.ops().iter().map(matrix_to_pairs).collect(),
            },
            Channel::Depolarizing(d) => Self {
                dim: d.dim(),
                family: family.as_str().to_owned(),
                seed,
                p: Some(d.strength()),
                ops: Vec::new(),
            },
        }
    }

    pub fn to_channel(&self) -> Result<Channel> {
        NoiseFamily::from_str(&self.family)?;
        if let Some(p) = self.p {
            if !self.ops.is_empty() {
                return Err(Error::Serialization("depolarizing record must not carry operators".into()));
            }
            return Ok(depolarizing_channel(self.dim, p)?.into());
        }
        let ops = self
            .ops
            .iter()
            .map(|pairs| pairs_to_matrix(self.dim, self.dim, pairs))
            .collect::<Result<Vec<_>>>()?;
        Ok(KrausChannel::new(ops)?.into())
    }
}
