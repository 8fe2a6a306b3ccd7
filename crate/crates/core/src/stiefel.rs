//! Learnable backward channels as points on complex Stiefel manifolds.
//!
//! A block `κ` of shape `(n·N)×n` stacks `N` Kraus operators vertically, so
//! `κ†κ = Σ kᵢ†kᵢ` and the manifold constraint is exactly completeness.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channels::{matrix_to_pairs, pairs_to_matrix, KrausChannel};
use crate::error::{Error, Result};
use crate::linalg::{add_sandwich, haar_isometry, polar_isometry, solve_small, ComplexMatrix, C64};
use crate::state::DensityMatrix;

/// Orthonormality tolerance every stored block satisfies.
pub const STIEFEL_TOL: f64 = 1e-8;

/// Drift above which a Cayley step is re-projected.
pub const REPROJECT_TOL: f64 = 1e-10;

/// `κ ∈ C^{(n·N)×n}` with `κ†κ = I`.
#[derive(Debug, Clone, PartialEq)]
pub struct StiefelPoint {
    dim: usize,
    count: usize,
    kappa: ComplexMatrix,
}

impl StiefelPoint {
    pub fn new(kappa: ComplexMatrix) -> Result<Self> {
        let dim = kappa.cols();
        if dim == 0 || !kappa.rows().is_multiple_of(dim) || kappa.rows() == 0 {
            return Err(Error::DimensionMismatch(format!(
                "Stiefel block of shape {}x{dim} is not a stack of square operators",
                kappa.rows()
            )));
        }
        let defect = kappa.isometry_defect();
        if !(defect < STIEFEL_TOL) {
            return Err(Error::Incomplete { defect, tolerance: STIEFEL_TOL });
        }
        Ok(Self { dim, count: kappa.rows() / dim, kappa })
    }

    /// Haar-random isometry.
    pub fn random<R: Rng + ?Sized>(dim: usize, count: usize, rng: &mut R) -> Self {
        Self { dim, count, kappa: haar_isometry(dim * count, dim, rng) }
    }

    /// `[I; 0; …; 0]`, the identity channel.
    pub fn identity(dim: usize, count: usize) -> Self {
        let kappa = ComplexMatrix::from_fn(dim * count, dim, |r, c| if r == c { C64::new(1.0, 0.0) } else { C64::new(0.0, 0.0) });
        Self { dim, count, kappa }
    }

    /// Hilbert dimension `n`.
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Operator count `N`.
    pub fn count(&self) -> usize {
        self.count
    }

    pub fn kappa(&self) -> &ComplexMatrix {
        &self.kappa
    }

    /// `‖κ†κ − I‖_F`.
    pub fn defect(&self) -> f64 {
        self.kappa.isometry_defect()
    }

    /// The `i`-th Kraus operator.
    pub fn op(&self, i: usize) -> ComplexMatrix {
        self.kappa.row_block(i * self.dim, self.dim)
    }

    pub fn ops(&self) -> Vec<ComplexMatrix> {
        (0..self.count).map(|i| self.op(i)).collect()
    }

    pub fn channel(&self) -> KrausChannel {
        KrausChannel::new(self.ops()).expect("Stiefel points are complete by invariant")
    }

    /// `Σ kᵢ ρ kᵢ†` without renormalisation; valid off the manifold.
    pub fn apply_raw(&self, rho: &ComplexMatrix) -> ComplexMatrix {
        apply_stacked(&self.kappa, self.dim, rho)
    }
}

/// Operator sum of a stacked `(n·N)×n` matrix, whether or not it is an isometry.
pub fn apply_stacked(kappa: &ComplexMatrix, dim: usize, rho: &ComplexMatrix) -> ComplexMatrix {
    let mut out = ComplexMatrix::zeros(dim, dim);
    for i in 0..kappa.rows() / dim {
        add_sandwich(&mut out, &kappa.row_block(i * dim, dim), rho);
    }
    out
}

/// Block initialisation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitKind {
    #[default]
    Haar,
    Identity,
}

/// `L_b` independent Stiefel blocks; block `t−1` realises backward step `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct BackwardModel {
    dim: usize,
    kraus_count: usize,
    blocks: Vec<StiefelPoint>,
}

impl BackwardModel {
    pub fn from_blocks(blocks: Vec<StiefelPoint>) -> Result<Self> {
        let first = blocks.first().ok_or_else(|| Error::InvalidParameter("backward model needs L_b >= 1".into()))?;
        let (dim, kraus_count) = (first.dim, first.count);
        if blocks.iter().any(|b| b.dim != dim || b.count != kraus_count) {
            return Err(Error::DimensionMismatch("all backward blocks must share (dim, K_b)".into()));
        }
        Ok(Self { dim, kraus_count, blocks })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// `L_b`.
    pub fn depth(&self) -> usize {
        self.blocks.len()
    }

    /// `K_b`.
    pub fn kraus_count(&self) -> usize {
        self.kraus_count
    }

    pub fn blocks(&self) -> &[StiefelPoint] {
        &self.blocks
    }

    /// Block for backward step `t ∈ 1..=L_b`.
    pub fn step(&self, t: usize) -> &StiefelPoint {
        &self.blocks[t - 1]
    }

    pub fn set_step(&mut self, t: usize, point: StiefelPoint) {
        assert!(point.dim == self.dim && point.count == self.kraus_count, "block shape changed");
        self.blocks[t - 1] = point;
    }

    pub fn max_defect(&self) -> f64 {
        self.blocks.iter().map(StiefelPoint::defect).fold(0.0, f64::max)
    }

    /// Unnormalised chain `σ̂_{L_b} = input`, `σ̂_{t−1} = Φ_t(σ̂_t)`, indexed by `t`.
    pub fn apply_raw(&self, input: &ComplexMatrix) -> Vec<ComplexMatrix> {
        let mut states = vec![ComplexMatrix::zeros(0, 0); self.depth() + 1];
        states[self.depth()] = input.clone();
        for t in (1..=self.depth()).rev() {
            states[t - 1] = self.step(t).apply_raw(&states[t]);
        }
        states
    }
}

/// `L_b` blocks of `K_b` operators each.
pub fn init_backward<R: Rng + ?Sized>(
    depth: usize,
    kraus_count: usize,
    dim: usize,
    init: InitKind,
    rng: &mut R,
) -> Result<BackwardModel> {
    if depth == 0 || kraus_count == 0 || dim == 0 {
        return Err(Error::InvalidParameter("L_b, K_b and dim must all be >= 1".into()));
    }
    let blocks = (0..depth)
        .map(|_| match init {
            InitKind::Haar => StiefelPoint::random(dim, kraus_count, rng),
            InitKind::Identity => StiefelPoint::identity(dim, kraus_count),
        })
        .collect();
    BackwardModel::from_blocks(blocks)
}

/// Runs the learned chain from `ρ_L`. Entry `t` of the result is `ρ̂_t`, so
/// the input sits at index `L_b` and the reconstruction at index 0.
pub fn apply_backward(model: &BackwardModel, rho_l: &DensityMatrix) -> Result<Vec<DensityMatrix>> {
    if rho_l.dim() != model.dim() {
        return Err(Error::DimensionMismatch(format!(
            "model dim {} vs state dim {}",
            model.dim(),
            rho_l.dim()
        )));
    }
    let mut states = vec![rho_l.clone(); model.depth() + 1];
    for t in (1..=model.depth()).rev() {
        let raw = model.step(t).apply_raw(states[t].mat());
        states[t - 1] = DensityMatrix::from_channel_output(raw)?.0;
    }
    Ok(states)
}

/// Cayley step result.
#[derive(Debug, Clone)]
pub struct CayleyStep {
    pub point: StiefelPoint,
    /// Set when drift exceeded [`REPROJECT_TOL`] and the polar projection ran.
    pub reprojected: bool,
}

/// `κ = κ₀ − τU(I + (τ/2)V†U)⁻¹V†κ₀` with `U = [G, κ₀]`, `V = [κ₀, −G]`.
///
/// Equivalent to `(I + τW/2)⁻¹(I − τW/2)κ₀` with `W = Gκ₀† − κ₀G†`, but only
/// a `2n×2n` system is solved. A singular system is reported so the caller
/// can shrink `τ`.
pub fn cayley_update(point: &StiefelPoint, g: &ComplexMatrix, tau: f64) -> Result<CayleyStep> {
    let k0 = &point.kappa;
    if g.rows() != k0.rows() || g.cols() != k0.cols() {
        return Err(Error::DimensionMismatch(format!(
            "gradient {}x{} vs point {}x{}",
            g.rows(),
            g.cols(),
            k0.rows(),
            k0.cols()
        )));
    }
    if tau == 0.0 || g.max_abs() == 0.0 {
        return Ok(CayleyStep { point: point.clone(), reprojected: false });
    }
    let n = point.dim;
    let k0_g = k0.adjoint_mul(g);
    let k0_k0 = k0.adjoint_mul(k0);
    let g_g = g.adjoint_mul(g);
    let g_k0 = k0_g.adjoint();

    // A = I + (τ/2)·[[κ₀†G, κ₀†κ₀], [−G†G, −G†κ₀]]
    let half = 0.5 * tau;
    let mut a = ComplexMatrix::zeros(2 * n, 2 * n);
    for r in 0..n {
        for c in 0..n {
            a[(r, c)] = k0_g[(r, c)] * half;
            a[(r, c + n)] = k0_k0[(r, c)] * half;
            a[(r + n, c)] = -g_g[(r, c)] * half;
            a[(r + n, c + n)] = -g_k0[(r, c)] * half;
        }
        a[(r, r)] += 1.0;
        a[(r + n, r + n)] += 1.0;
    }
    // V†κ₀ = [κ₀†κ₀; −G†κ₀]
    let rhs = ComplexMatrix::vstack(&[k0_k0, -&g_k0]);
    let x = solve_small(&a, &rhs)?;
    let top = x.row_block(0, n);
    let bottom = x.row_block(n, n);
    let mut step = g.matmul(&top);
    step += &k0.matmul(&bottom);
    let mut kappa = k0.clone();
    kappa.axpy(C64::new(-tau, 0.0), &step);
    if !kappa.is_finite() {
        return Err(Error::Singular { condition: f64::INFINITY });
    }

    let mut reprojected = false;
    let drift = kappa.isometry_defect();
    if drift > REPROJECT_TOL {
        log::info!("Cayley drift {drift:e} above {REPROJECT_TOL:e}; projecting onto the manifold");
        kappa = polar_isometry(&kappa)?;
        reprojected = true;
    }
    Ok(CayleyStep { point: StiefelPoint { dim: n, count: point.count, kappa }, reprojected })
}

/// `‖G − κG†κ‖_F`, the Riemannian gradient norm (zero at stationary points).
pub fn projected_gradient_norm(point: &StiefelPoint, g: &ComplexMatrix) -> f64 {
    let k = &point.kappa;
    let w_k = g - &k.matmul(&g.adjoint_mul(k));
    w_k.frobenius_norm()
}

/// JSON checkpoint of a backward model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelCheckpoint {
    #[serde(rename = "L_b")]
    pub depth: usize,
    #[serde(rename = "K_b")]
    pub kraus_count: usize,
    pub dim: usize,
    /// One row-major `[re, im]` list per block `κ_t`, `t = 1..=L_b`.
    pub blocks: Vec<Vec<[f64; 2]>>,
}

impl From<&BackwardModel> for ModelCheckpoint {
    fn from(m: &BackwardModel) -> Self {
        Self {
            depth: m.depth(),
            kraus_count: m.kraus_count,
            dim: m.dim,
            blocks: m.blocks.iter().map(|b| matrix_to_pairs(&b.kappa)).collect(),
        }
    }
}

impl TryFrom<&ModelCheckpoint> for BackwardModel {
    type Error = Error;
    fn try_from(c: &ModelCheckpoint) -> Result<Self> {
        if c.blocks.len() != c.depth {
            return Err(Error::Serialization(format!("checkpoint lists {} blocks for L_b={}", c.blocks.len(), c.depth)));
        }
        let blocks = c
            .blocks
            .iter()
            .map(|pairs| StiefelPoint::new(pairs_to_matrix(c.dim * c.kraus_count, c.dim, pairs)?))
            .collect::<Result<Vec<_>>>()?;
        BackwardModel::from_blocks(blocks)
    }
}
