//! Density matrices, pure states and the scalar diagnostics built on them.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{complex_gaussian, herm_eig, psd_sqrt, ComplexMatrix, C64, ONE, PSD_CLIP_TOL, ZERO};

/// Tolerance used when accepting a matrix as a density matrix.
pub const STATE_TOL: f64 = 1e-9;

/// Per-step renormalisation drift above which a warning is logged.
pub const DRIFT_WARN: f64 = 1e-8;

/// Purity above `1 - PURE_TOL` marks a state as rank one.
pub const PURE_TOL: f64 = 1e-9;

/// Eigenvalues below this contribute nothing to the entropy.
pub const ENTROPY_CUTOFF: f64 = 1e-12;

/// Largest supported register.
pub const MAX_QUBITS: usize = 7;

/// Hermitian, positive semi-definite, unit-trace matrix on `2^n` levels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ComplexMatrix", into = "ComplexMatrix")]
pub struct DensityMatrix {
    mat: ComplexMatrix,
}

impl TryFrom<ComplexMatrix> for DensityMatrix {
    type Error = Error;
    fn try_from(mat: ComplexMatrix) -> Result<Self> {
        Self::new(mat)
    }
}

impl From<DensityMatrix> for ComplexMatrix {
    fn from(rho: DensityMatrix) -> Self {
        rho.mat
    }
}

impl DensityMatrix {
    /// Validates all three density-matrix invariants at [`STATE_TOL`].
    pub fn new(mat: ComplexMatrix) -> Result<Self> {
        check_dim(&mat)?;
        let herm = max_hermitian_deviation(&mat);
        if herm > STATE_TOL {
            return Err(Error::InvalidState(format!("not Hermitian (deviation {herm:e})")));
        }
        let tr = mat.trace();
        if (tr.re - 1.0).abs() > STATE_TOL || tr.im.abs() > STATE_TOL {
            return Err(Error::InvalidState(format!("trace {tr} is not 1")));
        }
        let eig = herm_eig(&mat)?;
        let lmin = eig.eigenvalues.first().copied().unwrap_or(0.0);
        if lmin < -STATE_TOL {
            return Err(Error::InvalidState(format!("negative eigenvalue {lmin:e}")));
        }
        Ok(Self { mat: mat.hermitian_part() })
    }

    /// Re-symmetrises and trace-normalises the output of a CP map.
    ///
    /// Returns the state and the Frobenius size of the correction applied.
    pub fn from_channel_output(mat: ComplexMatrix) -> Result<(Self, f64)> {
        check_dim(&mat)?;
        if !mat.is_finite() {
            return Err(Error::InvalidState("non-finite entries".into()));
        }
        let herm = mat.hermitian_part();
        let tr = herm.trace().re;
        if !(tr > 0.0) {
            return Err(Error::InvalidState(format!("trace {tr} is not positive")));
        }
        let fixed = herm.scale_real(1.0 / tr);
        let drift = fixed.distance(&mat);
        if drift > DRIFT_WARN {
            log::warn!("state renormalisation drift {drift:e} exceeds {DRIFT_WARN:e}");
        }
        Ok((Self { mat: fixed }, drift))
    }

    /// Projector `|ψ⟩⟨ψ|`.
    pub fn from_pure(psi: &PureState) -> Self {
        Self { mat: ComplexMatrix::outer(&psi.amplitudes, &psi.amplitudes) }
    }

    /// `I / dim`.
    pub fn maximally_mixed(dim: usize) -> Self {
        Self { mat: ComplexMatrix::identity(dim).scale_real(1.0 / dim as f64) }
    }

    pub fn dim(&self) -> usize {
        self.mat.rows()
    }

    pub fn n_qubits(&self) -> usize {
        self.dim().trailing_zeros() as usize
    }

    pub fn mat(&self) -> &ComplexMatrix {
        &self.mat
    }

    pub fn into_mat(self) -> ComplexMatrix {
        self.mat
    }

    /// Smallest eigenvalue; used by positivity checks.
    pub fn min_eigenvalue(&self) -> Result<f64> {
        Ok(herm_eig(&self.mat)?.eigenvalues[0])
    }

    pub fn is_pure(&self) -> bool {
        purity(self) > 1.0 - PURE_TOL
    }
}

fn check_dim(mat: &ComplexMatrix) -> Result<usize> {
    let dim = mat.ensure_square()?;
    if dim == 0 || !dim.is_power_of_two() {
        return Err(Error::InvalidState(format!("dimension {dim} is not a power of two")));
    }
    Ok(dim)
}

fn max_hermitian_deviation(m: &ComplexMatrix) -> f64 {
    let n = m.rows();
    let mut worst = 0.0f64;
    for r in 0..n {
        for c in r..n {
            worst = worst.max((m[(r, c)] - m[(c, r)].conj()).norm());
        }
    }
    worst
}

/// Unit vector in `C^dim`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PureState {
    amplitudes: Vec<C64>,
}

impl PureState {
    /// Accepts amplitudes whose 2-norm is 1 within 1e-12.
    pub fn new(amplitudes: Vec<C64>) -> Result<Self> {
        let norm = norm2(&amplitudes);
        if amplitudes.is_empty() || (norm - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidState(format!("amplitude norm {norm} is not 1")));
        }
        Ok(Self { amplitudes })
    }

    /// Normalises arbitrary non-zero amplitudes.
    pub fn normalized(amplitudes: Vec<C64>) -> Result<Self> {
        let norm = norm2(&amplitudes);
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(Error::InvalidState("cannot normalise a zero vector".into()));
        }
        Ok(Self { amplitudes: amplitudes.into_iter().map(|z| z / norm).collect() })
    }

    pub fn dim(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn amplitudes(&self) -> &[C64] {
        &self.amplitudes
    }

    pub fn projector(&self) -> DensityMatrix {
        DensityMatrix::from_pure(self)
    }
}

fn norm2(v: &[C64]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Named and random target states.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TargetKind {
    #[default]
    Haar,
    Zero,
    Plus,
    Ghz,
}

impl TargetKind {
    pub fn build<R: Rng + ?Sized>(self, n_qubits: usize, rng: &mut R) -> Result<PureState> {
        check_qubits(n_qubits)?;
        let dim = 1usize << n_qubits;
        match self {
            TargetKind::Haar => random_pure_state(n_qubits, rng),
            TargetKind::Zero => {
                let mut a = vec![ZERO; dim];
                a[0] = ONE;
                PureState::new(a)
            }
            TargetKind::Plus => PureState::normalized(vec![ONE; dim]),
            TargetKind::Ghz => {
                let mut a = vec![ZERO; dim];
                a[0] = ONE;
                a[dim - 1] = ONE;
                PureState::normalized(a)
            }
        }
    }
}

fn check_qubits(n: usize) -> Result<()> {
    if !(1..=MAX_QUBITS).contains(&n) {
        return Err(Error::InvalidParameter(format!("qubit count {n} outside 1..={MAX_QUBITS}")));
    }
    Ok(())
}

/// Haar-random pure state on `n_qubits`.
pub fn random_pure_state<R: Rng + ?Sized>(n_qubits: usize, rng: &mut R) -> Result<PureState> {
    check_qubits(n_qubits)?;
    let dim = 1usize << n_qubits;
    let amps: Vec<C64> = (0..dim).map(|_| complex_gaussian(rng)).collect();
    PureState::normalized(amps)
}

/// `Tr(ρ²)`.
pub fn purity(rho: &DensityMatrix) -> f64 {
    rho.mat().data().iter().map(|z| z.norm_sqr()).sum()
}

/// Von Neumann entropy in bits.
pub fn von_neumann_entropy(rho: &DensityMatrix) -> Result<f64> {
    let eig = herm_eig(rho.mat())?;
    Ok(eig
        .eigenvalues
        .iter()
        .filter(|&&l| l > ENTROPY_CUTOFF)
        .map(|&l| -l * l.log2())
        .sum::<f64>()
        .max(0.0))
}

/// Bloch vector `(Tr ρX, Tr ρY, Tr ρZ)` of a single qubit.
pub fn bloch_vector(rho: &DensityMatrix) -> Result<[f64; 3]> {
    if rho.dim() != 2 {
        return Err(Error::DimensionMismatch(format!("Bloch vector needs dim 2, got {}", rho.dim())));
    }
    let m = rho.mat();
    let off = m[(0, 1)];
    Ok([2.0 * off.re, -2.0 * off.im, m[(0, 0)].re - m[(1, 1)].re])
}

/// Uhlmann fidelity `(Tr√(√a b √a))²`.
///
/// When either argument is rank one the closed form `⟨ψ|σ|ψ⟩ = Tr(ρσ)` is
/// used; the general path takes two PSD square roots.
pub fn fidelity(a: &DensityMatrix, b: &DensityMatrix) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch(format!("fidelity of dims {} and {}", a.dim(), b.dim())));
    }
    if a.is_pure() || b.is_pure() {
        return Ok(a.mat().trace_product(b.mat()).re.clamp(0.0, 1.0));
    }
    uhlmann_fidelity(a.mat(), b.mat())
}

/// General Uhlmann fidelity without the pure-state shortcut.
pub fn uhlmann_fidelity(a: &ComplexMatrix, b: &ComplexMatrix) -> Result<f64> {
    let sa = psd_sqrt(a, PSD_CLIP_TOL)?;
    let inner = sa.matmul(b).matmul(&sa);
    let eig = herm_eig(&inner)?;
    let root: f64 = eig.trace_sqrt();
    Ok((root * root).clamp(0.0, 1.0))
}

/// Pseudo-inverse cutoff for the mixed-reference fidelity derivative.
pub const FIDELITY_PINV_CUTOFF: f64 = 1e-10;

/// A fixed reference state prepared for repeated fidelity evaluations
/// against varying (possibly unnormalised) PSD arguments.
#[derive(Debug, Clone)]
pub enum FidelityReference {
    Pure { proj: ComplexMatrix },
    Mixed { sqrt: ComplexMatrix },
}

/// Root fidelity `f = Tr√(√ρ σ √ρ)` together with `∂f/∂σ`.
///
/// The derivative is the Hermitian matrix `D` such that `df = Tr(D dσ)`.
#[derive(Debug, Clone)]
pub struct RootFidelity {
    pub root: f64,
    pub grad: ComplexMatrix,
}

impl FidelityReference {
    pub fn new(rho: &DensityMatrix) -> Result<Self> {
        if rho.is_pure() {
            Ok(Self::Pure { proj: rho.mat().clone() })
        } else {
            Ok(Self::Mixed { sqrt: psd_sqrt(rho.mat(), PSD_CLIP_TOL)? })
        }
    }

    /// Squared fidelity `F` against `sigma`, unclipped.
    pub fn fidelity(&self, sigma: &ComplexMatrix) -> Result<f64> {
        Ok(self.root(sigma)?.powi(2))
    }

    /// Root fidelity `f` against `sigma`.
    pub fn root(&self, sigma: &ComplexMatrix) -> Result<f64> {
        match self {
            Self::Pure { proj } => Ok(proj.trace_product(sigma).re.max(0.0).sqrt()),
            Self::Mixed { sqrt } => {
                let inner = sqrt.matmul(sigma).matmul(sqrt);
                let eig = herm_eig(&inner)?;
                Ok(eig.trace_sqrt())
            }
        }
    }

    /// `F` and `∂F/∂σ` (Hermitian).
    pub fn fidelity_with_grad(&self, sigma: &ComplexMatrix) -> Result<(f64, ComplexMatrix)> {
        match self {
            Self::Pure { proj } => Ok((proj.trace_product(sigma).re, proj.clone())),
            Self::Mixed { .. } => {
                let rf = self.root_with_grad(sigma)?;
                Ok((rf.root * rf.root, rf.grad.scale_real(2.0 * rf.root)))
            }
        }
    }

    /// `f` and `∂f/∂σ`.
    ///
    /// For a mixed reference `A = √ρ`: `∂f/∂σ = ½ A M^{+1/2} A` with
    /// `M = AσA`, eigenvalues of `M` below [`FIDELITY_PINV_CUTOFF`] dropped.
    pub fn root_with_grad(&self, sigma: &ComplexMatrix) -> Result<RootFidelity> {
        match self {
            Self::Pure { proj } => {
                let overlap = proj.trace_product(sigma).re;
                if !(overlap > 0.0) {
                    return Err(Error::FidelityDerivative(format!(
                        "root fidelity derivative undefined at zero overlap ({overlap:e})"
                    )));
                }
                let root = overlap.sqrt();
                Ok(RootFidelity { root, grad: proj.scale_real(0.5 / root) })
            }
            Self::Mixed { sqrt } => {
                let inner = sqrt.matmul(sigma).matmul(sqrt);
                let eig = herm_eig(&inner).map_err(|e| Error::FidelityDerivative(e.to_string()))?;
                let root: f64 = eig.trace_sqrt();
                let pinv_sqrt = eig.map(|l| if l > FIDELITY_PINV_CUTOFF { 1.0 / l.sqrt() } else { 0.0 });
                let grad = sqrt.matmul(&pinv_sqrt).matmul(sqrt).scale_real(0.5).hermitian_part();
                if !root.is_finite() || !grad.is_finite() {
                    return Err(Error::FidelityDerivative("non-finite root fidelity".into()));
                }
                Ok(RootFidelity { root, grad })
            }
        }
    }
}

/// One branch of a measurement.
#[derive(Debug, Clone)]
pub struct MeasurementOutcome {
    pub probability: f64,
    /// `None` when the outcome has probability below 1e-12.
    pub post_state: Option<DensityMatrix>,
}

/// Probabilities below this carry no post-measurement state.
pub const NULL_OUTCOME: f64 = 1e-12;

/// Born-rule update for a complete set of measurement operators.
pub fn measurement_update(rho: &DensityMatrix, ops: &[ComplexMatrix]) -> Result<Vec<MeasurementOutcome>> {
    let dim = rho.dim();
    if ops.is_empty() || ops.iter().any(|m| m.rows() != dim || m.cols() != dim) {
        return Err(Error::DimensionMismatch(format!("measurement operators must be {dim}x{dim}")));
    }
    let mut gram = ComplexMatrix::zeros(dim, dim);
    for m in ops {
        gram += &m.adjoint_mul(m);
    }
    let defect = gram.distance(&ComplexMatrix::identity(dim));
    if defect > STATE_TOL {
        return Err(Error::Incomplete { defect, tolerance: STATE_TOL });
    }
    ops.iter()
        .map(|m| {
            let branch = m.matmul(rho.mat()).mul_adjoint(m);
            let p = branch.trace().re;
            if p < NULL_OUTCOME {
                return Ok(MeasurementOutcome { probability: p.max(0.0), post_state: None });
            }
            let (post, _) = DensityMatrix::from_channel_output(branch)?;
            Ok(MeasurementOutcome { probability: p, post_state: Some(post) })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::haar_unitary;
    use crate::rng::seeded;

    fn ket(bits: &[f64]) -> PureState {
        PureState::normalized(bits.iter().map(|&b| C64::new(b, 0.0)).collect()).unwrap()
    }

    fn random_mixed(dim: usize, rank: usize, rng: &mut crate::rng::Prng) -> DensityMatrix {
        let g = ComplexMatrix::from_fn(dim, rank, |_, _| complex_gaussian(rng));
        let m = g.mul_adjoint(&g);
        let tr = m.trace().re;
        DensityMatrix::new(m.scale_real(1.0 / tr)).unwrap()
    }

    #[test]
    fn fidelity_examples() {
        let zero = ket(&[1.0, 0.0]).projector();
        let one = ket(&[0.0, 1.0]).projector();
        let mixed = DensityMatrix::maximally_mixed(2);
        assert!((fidelity(&zero, &zero).unwrap() - 1.0).abs() < 1e-12);
        assert!(fidelity(&zero, &one).unwrap().abs() < 1e-12);
        assert!((fidelity(&zero, &mixed).unwrap() - 0.5).abs() < 1e-12);
        assert!((fidelity(&mixed, &mixed).unwrap() - 1.0).abs() < 1e-12);
        assert!(fidelity(&zero, &DensityMatrix::maximally_mixed(4)).is_err());
    }

    #[test]
    fn fidelity_symmetric_and_matches_pure_closed_form() {
        let mut rng = seeded(1);
        for dim in [2, 4, 8] {
            for _ in 0..20 {
                let a = random_mixed(dim, dim, &mut rng);
                let b = random_mixed(dim, 2, &mut rng);
                let fab = fidelity(&a, &b).unwrap();
                let fba = fidelity(&b, &a).unwrap();
                assert!((fab - fba).abs() < 1e-9);
                let psi = random_pure_state(dim.trailing_zeros() as usize, &mut rng).unwrap();
                let p = psi.projector();
                let closed = b.mat().expectation(psi.amplitudes()).re;
                let general = uhlmann_fidelity(p.mat(), b.mat()).unwrap();
                assert!((closed - general).abs() < 1e-9, "closed={closed} general={general}");
                assert!((fidelity(&p, &b).unwrap() - closed).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn purity_and_entropy_examples() {
        let psi = ket(&[1.0, 1.0]).projector();
        assert!((purity(&psi) - 1.0).abs() < 1e-12);
        assert!(von_neumann_entropy(&psi).unwrap().abs() < 1e-9);
        for n in 1..=4 {
            let d = 1usize << n;
            let m = DensityMatrix::maximally_mixed(d);
            assert!((purity(&m) - 1.0 / d as f64).abs() < 1e-12);
            assert!((von_neumann_entropy(&m).unwrap() - n as f64).abs() < 1e-9);
        }
    }

    #[test]
    fn bloch_examples() {
        let b = bloch_vector(&ket(&[1.0, 0.0]).projector()).unwrap();
        assert_eq!(b, [0.0, 0.0, 1.0]);
        let b = bloch_vector(&DensityMatrix::maximally_mixed(2)).unwrap();
        assert_eq!(b, [0.0, 0.0, 0.0]);
        let b = bloch_vector(&ket(&[1.0, 1.0]).projector()).unwrap();
        assert!((b[0] - 1.0).abs() < 1e-12 && b[1].abs() < 1e-12 && b[2].abs() < 1e-12);
        assert!(bloch_vector(&DensityMatrix::maximally_mixed(4)).is_err());
    }

    #[test]
    fn bloch_purity_relation() {
        let mut rng = seeded(4);
        for _ in 0..100 {
            let rho = random_mixed(2, 2, &mut rng);
            let r = bloch_vector(&rho).unwrap();
            let r2 = r.iter().map(|x| x * x).sum::<f64>();
            assert!(r2 <= 1.0 + 1e-9);
            assert!((purity(&rho) - (1.0 + r2) / 2.0).abs() < 1e-9);
        }
    }

    #[test]
    fn random_pure_states() {
        let mut rng = seeded(99);
        let n = 4000;
        let mut sums = [0.0; 3];
        let mut sq = [0.0; 3];
        for _ in 0..n {
            let psi = random_pure_state(1, &mut rng).unwrap();
            let p = psi.projector();
            assert!((purity(&p) - 1.0).abs() < 1e-12);
            let r = bloch_vector(&p).unwrap();
            for i in 0..3 {
                sums[i] += r[i];
                sq[i] += r[i] * r[i];
            }
        }
        for i in 0..3 {
            let mean = sums[i] / n as f64;
            let se = ((sq[i] / n as f64 - mean * mean) / n as f64).sqrt();
            assert!(mean.abs() < 3.0 * se, "axis {i}: mean {mean} se {se}");
        }
        let a = random_pure_state(3, &mut seeded(5)).unwrap();
        let b = random_pure_state(3, &mut seeded(5)).unwrap();
        assert_eq!(a, b);
        assert!(random_pure_state(0, &mut rng).is_err());
        assert!(random_pure_state(8, &mut rng).is_err());
    }

    #[test]
    fn measurement_examples() {
        let p0 = ComplexMatrix::from_real_diag(&[1.0, 0.0]);
        let p1 = ComplexMatrix::from_real_diag(&[0.0, 1.0]);
        let zero = ket(&[1.0, 0.0]).projector();
        let out = measurement_update(&zero, &[p0.clone(), p1.clone()]).unwrap();
        assert!((out[0].probability - 1.0).abs() < 1e-15);
        assert!(out[1].probability.abs() < 1e-15);
        assert!(out[1].post_state.is_none());
        assert!(out[0].post_state.as_ref().unwrap().mat().distance(zero.mat()) < 1e-15);

        let plus = ket(&[1.0, 1.0]).projector();
        let out = measurement_update(&plus, &[p0.clone(), p1]).unwrap();
        assert!((out[0].probability - 0.5).abs() < 1e-12);
        assert!((out[1].probability - 0.5).abs() < 1e-12);

        assert!(matches!(measurement_update(&plus, &[p0]), Err(Error::Incomplete { .. })));
    }

    #[test]
    fn measurement_ensemble_average_matches_channel() {
        let mut rng = seeded(8);
        for _ in 0..50 {
            let rho = random_mixed(4, 4, &mut rng);
            // Measurement operators from a Haar isometry split into blocks.
            let u = haar_unitary(12, &mut rng);
            let ops: Vec<ComplexMatrix> = (0..3)
                .map(|b| ComplexMatrix::from_fn(4, 4, |r, c| u[(b * 4 + r, c)]))
                .collect();
            let outcomes = measurement_update(&rho, &ops).unwrap();
            let total: f64 = outcomes.iter().map(|o| o.probability).sum();
            assert!((total - 1.0).abs() < 1e-10);
            assert!(outcomes.iter().all(|o| o.probability >= 0.0));
            let mut avg = ComplexMatrix::zeros(4, 4);
            let mut direct = ComplexMatrix::zeros(4, 4);
            for (o, m) in outcomes.iter().zip(&ops) {
                if let Some(s) = &o.post_state {
                    avg.axpy(C64::new(o.probability, 0.0), s.mat());
                }
                direct += &m.matmul(rho.mat()).mul_adjoint(m);
            }
            assert!(avg.distance(&direct) < 1e-10);
        }
    }

    #[test]
    fn validation_rejects_bad_matrices() {
        assert!(DensityMatrix::new(ComplexMatrix::identity(2)).is_err());
        assert!(DensityMatrix::new(ComplexMatrix::from_real_diag(&[1.5, -0.5])).is_err());
        assert!(DensityMatrix::new(ComplexMatrix::identity(3).scale_real(1.0 / 3.0)).is_err());
        let mut m = ComplexMatrix::from_real_diag(&[0.5, 0.5]);
        m[(0, 1)] = C64::new(0.1, 0.0);
        assert!(DensityMatrix::new(m).is_err());
        assert!(PureState::new(vec![ONE, ONE]).is_err());
    }

    #[test]
    fn named_targets() {
        let mut rng = seeded(0);
        let ghz = TargetKind::Ghz.build(3, &mut rng).unwrap();
        let s = std::f64::consts::FRAC_1_SQRT_2;
        assert!((ghz.amplitudes()[0].re - s).abs() < 1e-15 && (ghz.amplitudes()[7].re - s).abs() < 1e-15);
        let plus = TargetKind::Plus.build(2, &mut rng).unwrap();
        assert!(plus.amplitudes().iter().all(|z| (z.re - 0.5).abs() < 1e-15));
        let zero = TargetKind::Zero.build(1, &mut rng).unwrap();
        assert_eq!(zero.amplitudes()[0], ONE);
    }
}
