//! Fidelity losses over a backward chain and their reverse-mode gradients.
//!
//! Losses are evaluated on raw (unnormalised) operator sums so they stay
//! well defined when `κ` is perturbed off the manifold, which the
//! finite-difference oracle relies on.
//!
//! Gradients use the conjugate-coefficient Wirtinger convention: for a real
//! loss `L` the block `G = ∂L/∂κ*` satisfies `L(κ+δ) ≈ L(κ) + 2 Re Tr(G†δ)`.

use serde::{Deserialize, Serialize};

use crate::diffusion::Trajectory;
use crate::error::{Error, Result};
use crate::linalg::{add_sandwich, ComplexMatrix};
use crate::state::FidelityReference;
use crate::stiefel::{apply_stacked, BackwardModel};

/// Which functional is optimised.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// Mean over steps of `1 − F(ρ_{t−1}, Φ_t(ρ_t))`; blocks decouple.
    SqcoStep,
    /// `1 − F(ρ_0, ρ̂_0)`.
    Hqto,
    /// End-to-end term plus `λ Σ α_t (1 − F(ρ_{align(t)}, ρ̂_t))`.
    Pc,
}

impl LossKind {
    pub fn as_str(self) -> &'static str {
        match self {
            LossKind::SqcoStep => "sqco_step",
            LossKind::Hqto => "hqto",
            LossKind::Pc => "pc",
        }
    }
}

/// Shape of each fidelity term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum LossForm {
    /// `1 − F` for every term.
    #[default]
    #[serde(rename = "one_minus_F")]
    OneMinusF,
    /// `−√F` for the primary term and `1 − √F` for path terms.
    #[serde(rename = "neg_sqrt_F")]
    NegSqrtF,
}

/// Loss configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossSpec {
    pub kind: LossKind,
    /// Path-constraint weight; read only for [`LossKind::Pc`].
    #[serde(default)]
    pub lambda: f64,
    /// Per-step weights `α_1 … α_{L_b}`; all ones when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<Vec<f64>>,
    #[serde(default)]
    pub loss_form: LossForm,
}

impl LossSpec {
    pub fn sqco() -> Self {
        Self { kind: LossKind::SqcoStep, lambda: 0.0, alpha: None, loss_form: LossForm::OneMinusF }
    }

    pub fn hqto() -> Self {
        Self { kind: LossKind::Hqto, ..Self::sqco() }
    }

    pub fn pc(lambda: f64) -> Self {
        Self { kind: LossKind::Pc, lambda, ..Self::sqco() }
    }

    /// `α_t` for `t = 1..=L_b`.
    pub fn weights(&self, depth: usize) -> Result<Vec<f64>> {
        match &self.alpha {
            None => Ok(vec![1.0; depth]),
            Some(a) if a.len() == depth => Ok(a.clone()),
            Some(a) => Err(Error::InvalidParameter(format!("alpha has {} entries but L_b = {depth}", a.len()))),
        }
    }

    pub fn validate(&self, depth: usize) -> Result<()> {
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::InvalidParameter(format!("lambda {} must be finite and >= 0", self.lambda)));
        }
        let w = self.weights(depth)?;
        if w.iter().any(|a| !(*a >= 0.0) || !a.is_finite()) {
            return Err(Error::InvalidParameter("alpha weights must be finite and >= 0".into()));
        }
        Ok(())
    }

    /// Upper end of the loss range for the canonical form.
    pub fn upper_bound(&self, depth: usize) -> f64 {
        match self.kind {
            LossKind::Pc => 1.0 + self.lambda * self.weights(depth).map(|w| w.iter().sum()).unwrap_or(0.0),
            _ => 1.0,
        }
    }
}

/// Forward index paired with backward index `t`: `round(t·L_f/L_b)`, ties
/// away from zero.
pub fn align_index(t: usize, depth_b: usize, depth_f: usize) -> usize {
    (2 * t * depth_f + depth_b) / (2 * depth_b)
}

/// Loss value, optionally with `F(ρ_{align(t)}, ρ̂_t)` for `t = 0..=L_b`.
#[derive(Debug, Clone, PartialEq)]
pub struct LossEval {
    pub loss: f64,
    /// Empty unless requested.
    pub fidelities: Vec<f64>,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Role {
    Primary,
    Path,
}

/// A trajectory and loss specification prepared for repeated evaluation.
#[derive(Debug, Clone)]
pub struct LossProblem {
    spec: LossSpec,
    depth: usize,
    dim: usize,
    align: Vec<usize>,
    /// `λ α_t` at index `t − 1`; empty when no path terms contribute.
    path_weights: Vec<f64>,
    refs: Vec<FidelityReference>,
    forward: Vec<ComplexMatrix>,
}

impl LossProblem {
    pub fn new(traj: &Trajectory, spec: &LossSpec, depth_b: usize) -> Result<Self> {
        if depth_b == 0 {
            return Err(Error::InvalidParameter("L_b must be >= 1".into()));
        }
        spec.validate(depth_b)?;
        let depth_f = traj.depth();
        if spec.kind == LossKind::SqcoStep && depth_b != depth_f {
            return Err(Error::InvalidParameter(format!("SQCO pairs steps one-to-one, but L_b={depth_b} and L_f={depth_f}")));
        }
        let align: Vec<usize> = (0..=depth_b).map(|t| align_index(t, depth_b, depth_f)).collect();
        let path_weights = if spec.kind == LossKind::Pc && spec.lambda != 0.0 {
            spec.weights(depth_b)?.into_iter().map(|a| spec.lambda * a).collect()
        } else {
            Vec::new()
        };
        let refs = traj.states().iter().map(FidelityReference::new).collect::<Result<_>>()?;
        let forward = traj.states().iter().map(|s| s.mat().clone()).collect();
        Ok(Self { spec: spec.clone(), depth: depth_b, dim: traj.dim(), align, path_weights, refs, forward })
    }

    pub fn spec(&self) -> &LossSpec {
        &self.spec
    }

    /// `L_b`.
    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// `ρ_{L_f}`, the input of the backward chain.
    pub fn input(&self) -> &ComplexMatrix {
        self.forward.last().expect("trajectory is non-empty")
    }

    /// Forward index paired with backward index `t`.
    pub fn aligned(&self, t: usize) -> usize {
        self.align[t]
    }

    fn reference(&self, t: usize) -> &FidelityReference {
        &self.refs[self.align[t]]
    }

    fn check_model(&self, kappas: &[ComplexMatrix]) -> Result<()> {
        if kappas.len() != self.depth {
            return Err(Error::DimensionMismatch(format!("model has {} blocks, loss expects {}", kappas.len(), self.depth)));
        }
        if kappas.iter().any(|k| k.cols() != self.dim || k.rows() % self.dim != 0) {
            return Err(Error::DimensionMismatch(format!("blocks must be (dim·K)x{}", self.dim)));
        }
        Ok(())
    }

    /// Term value and the fidelity `F` it is built from.
    fn term(&self, r: &FidelityReference, sigma: &ComplexMatrix, role: Role) -> Result<(f64, f64)> {
        match self.spec.loss_form {
            LossForm::OneMinusF => {
                let f = r.fidelity(sigma)?;
                Ok((1.0 - f, f))
            }
            LossForm::NegSqrtF => {
                let root = r.root(sigma)?;
                let value = if role == Role::Primary { -root } else { 1.0 - root };
                Ok((value, root * root))
            }
        }
    }

    /// Term value, fidelity and `∂term/∂σ`.
    fn term_grad(&self, r: &FidelityReference, sigma: &ComplexMatrix, role: Role) -> Result<(f64, f64, ComplexMatrix)> {
        match self.spec.loss_form {
            LossForm::OneMinusF => {
                let (f, grad) = r.fidelity_with_grad(sigma)?;
                Ok((1.0 - f, f, -&grad))
            }
            LossForm::NegSqrtF => {
                let rf = r.root_with_grad(sigma)?;
                let value = if role == Role::Primary { -rf.root } else { 1.0 - rf.root };
                Ok((value, rf.root * rf.root, -&rf.grad))
            }
        }
    }

    /// Backward chain states `σ̂_t`, `t = 0..=L_b`, from raw stacked blocks.
    fn chain(&self, kappas: &[ComplexMatrix]) -> Vec<ComplexMatrix> {
        let mut states = vec![ComplexMatrix::zeros(0, 0); self.depth + 1];
        states[self.depth] = self.input().clone();
        for t in (1..=self.depth).rev() {
            states[t - 1] = apply_stacked(&kappas[t - 1], self.dim, &states[t]);
        }
        states
    }

    /// End-to-end and path loss of a chain `σ̂_0 … σ̂_{L_b}`.
    ///
    /// With `λ = 0` the path sum is skipped entirely, so PC and HQTO run the
    /// identical instructions.
    pub fn chain_loss(&self, states: &[ComplexMatrix]) -> Result<f64> {
        if states.len() != self.depth + 1 {
            return Err(Error::DimensionMismatch(format!("chain has {} states, expected {}", states.len(), self.depth + 1)));
        }
        let (mut loss, _) = self.term(self.reference(0), &states[0], Role::Primary)?;
        for (i, w) in self.path_weights.iter().enumerate() {
            let t = i + 1;
            loss += w * self.term(self.reference(t), &states[t], Role::Path)?.0;
        }
        Ok(loss)
    }

    /// `F(ρ_{align(t)}, σ̂_t)` for every chain state, clipped to `[0, 1]`.
    pub fn chain_fidelities(&self, states: &[ComplexMatrix]) -> Result<Vec<f64>> {
        (0..=self.depth)
            .map(|t| Ok(self.reference(t).fidelity(&states[t])?.clamp(0.0, 1.0)))
            .collect()
    }

    /// Local SQCO loss of step `t` for block `kappa`, and its fidelity.
    pub fn local_loss(&self, t: usize, kappa: &ComplexMatrix) -> Result<(f64, f64)> {
        let out = apply_stacked(kappa, self.dim, &self.forward[t]);
        self.term(&self.refs[t - 1], &out, Role::Primary)
    }

    /// Local SQCO loss, fidelity and gradient `G = C k_i ρ_t` in κ layout.
    pub fn local_gradient(&self, t: usize, kappa: &ComplexMatrix) -> Result<(f64, f64, ComplexMatrix)> {
        let input = &self.forward[t];
        let out = apply_stacked(kappa, self.dim, input);
        let (value, f, cot) = self.term_grad(&self.refs[t - 1], &out, Role::Primary)?;
        Ok((value, f, self.block_gradient(kappa, &cot, input)))
    }

    /// `[C k_1 σ; …; C k_N σ]`.
    fn block_gradient(&self, kappa: &ComplexMatrix, cot: &ComplexMatrix, input: &ComplexMatrix) -> ComplexMatrix {
        let d = self.dim;
        let ops: Vec<ComplexMatrix> = (0..kappa.rows() / d)
            .map(|i| cot.matmul(&kappa.row_block(i * d, d)).matmul(input))
            .collect();
        ComplexMatrix::vstack(&ops)
    }

    /// Loss (and optionally curves) for raw stacked blocks.
    pub fn evaluate_stacks(&self, kappas: &[ComplexMatrix], curves: bool) -> Result<LossEval> {
        self.check_model(kappas)?;
        let chain = (curves || self.spec.kind != LossKind::SqcoStep).then(|| self.chain(kappas));
        let loss = match self.spec.kind {
            LossKind::SqcoStep => {
                let mut total = 0.0;
                for t in 1..=self.depth {
                    total += self.local_loss(t, &kappas[t - 1])?.0;
                }
                total / self.depth as f64
            }
            LossKind::Hqto | LossKind::Pc => self.chain_loss(chain.as_ref().expect("chain built"))?,
        };
        let fidelities = match (&chain, curves) {
            (Some(c), true) => self.chain_fidelities(c)?,
            _ => Vec::new(),
        };
        Ok(LossEval { loss, fidelities })
    }

    pub fn evaluate(&self, model: &BackwardModel, curves: bool) -> Result<LossEval> {
        self.evaluate_stacks(&stacks(model), curves)
    }

    /// Loss and `∂L/∂κ_t*` for every block, by reverse accumulation.
    pub fn gradient_stacks(&self, kappas: &[ComplexMatrix]) -> Result<(f64, Vec<ComplexMatrix>)> {
        self.check_model(kappas)?;
        if self.spec.kind == LossKind::SqcoStep {
            let scale = 1.0 / self.depth as f64;
            let mut loss = 0.0;
            let mut grads = Vec::with_capacity(self.depth);
            for t in 1..=self.depth {
                let (value, _, g) = self.local_gradient(t, &kappas[t - 1])?;
                loss += value;
                grads.push(g.scale_real(scale));
            }
            return Ok((loss * scale, grads));
        }

        let states = self.chain(kappas);
        let (mut loss, _, mut cot) = self.term_grad(self.reference(0), &states[0], Role::Primary)?;
        let mut grads = vec![ComplexMatrix::zeros(0, 0); self.depth];
        let d = self.dim;
        for t in 1..=self.depth {
            let kappa = &kappas[t - 1];
            grads[t - 1] = self.block_gradient(kappa, &cot, &states[t]);
            if t == self.depth {
                break;
            }
            let mut up = ComplexMatrix::zeros(d, d);
            for i in 0..kappa.rows() / d {
                add_sandwich(&mut up, &kappa.row_block(i * d, d).adjoint(), &cot);
            }
            if let Some(&w) = self.path_weights.get(t - 1) {
                let (value, _, g) = self.term_grad(self.reference(t), &states[t], Role::Path)?;
                loss += w * value;
                up.axpy(w.into(), &g);
            }
            cot = up;
        }
        // The last path term compares the fixed input with itself.
        if let Some(&w) = self.path_weights.get(self.depth - 1) {
            loss += w * self.term(self.reference(self.depth), &states[self.depth], Role::Path)?.0;
        }
        Ok((loss, grads))
    }

    pub fn gradient(&self, model: &BackwardModel) -> Result<(f64, Vec<ComplexMatrix>)> {
        self.gradient_stacks(&stacks(model))
    }
}

/// Stacked `κ_t` of every block.
pub fn stacks(model: &BackwardModel) -> Vec<ComplexMatrix> {
    model.blocks().iter().map(|b| b.kappa().clone()).collect()
}

/// Path-constrained loss of already computed backward states `ρ̂_0 … ρ̂_{L_b}`.
pub fn pc_loss(traj: &Trajectory, backward: &[crate::state::DensityMatrix], spec: &LossSpec) -> Result<f64> {
    if backward.is_empty() {
        return Err(Error::InvalidParameter("no backward states".into()));
    }
    let problem = LossProblem::new(traj, &LossSpec { kind: LossKind::Pc, ..spec.clone() }, backward.len() - 1)?;
    let mats: Vec<ComplexMatrix> = backward.iter().map(|s| s.mat().clone()).collect();
    problem.chain_loss(&mats)
}
