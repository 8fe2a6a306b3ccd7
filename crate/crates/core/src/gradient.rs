//! Analytic loss gradients and their central-difference oracle.

use crate::diffusion::Trajectory;
use crate::error::{Error, Result};
use crate::linalg::{ComplexMatrix, C64};
use crate::loss::{stacks, LossProblem, LossSpec};
use crate::stiefel::BackwardModel;

/// Entries smaller than this are excluded from the relative deviation.
pub const FD_MAGNITUDE_FLOOR: f64 = 1e-8;

/// `∂L/∂κ_t*` for every block of `model`.
pub fn loss_gradient(model: &BackwardModel, traj: &Trajectory, spec: &LossSpec) -> Result<Vec<ComplexMatrix>> {
    Ok(LossProblem::new(traj, spec, model.depth())?.gradient(model)?.1)
}

/// Analytic and finite-difference gradients on the same loss and point.
#[derive(Debug, Clone)]
pub struct GradientReport {
    pub analytic: Vec<ComplexMatrix>,
    pub fd: Vec<ComplexMatrix>,
    /// Max over entries with `|analytic| > FD_MAGNITUDE_FLOOR` of
    /// `|fd − analytic| / |analytic|`.
    pub max_relative_deviation: f64,
    /// Max over all entries of `|fd − analytic|`.
    pub max_abs_deviation: f64,
}

/// Central differences on the real and imaginary part of every `κ` entry:
/// `Re G = (L(κ+h) − L(κ−h))/4h` and `Im G = (L(κ+ih) − L(κ−ih))/4h`.
pub fn fd_oracle(model: &BackwardModel, traj: &Trajectory, spec: &LossSpec, h: f64) -> Result<GradientReport> {
    let problem = LossProblem::new(traj, spec, model.depth())?;
    fd_report(&problem, &stacks(model), h)
}

/// [`fd_oracle`] on a prepared problem and raw blocks.
pub fn fd_report(problem: &LossProblem, kappas: &[ComplexMatrix], h: f64) -> Result<GradientReport> {
    if !(1e-6..=1e-3).contains(&h) {
        return Err(Error::InvalidParameter(format!("finite-difference step {h} outside [1e-6, 1e-3]")));
    }
    let (_, analytic) = problem.gradient_stacks(kappas)?;
    let fd = fd_gradient(problem, kappas, h)?;
    let mut max_rel = 0.0f64;
    let mut max_abs = 0.0f64;
    for (a, f) in analytic.iter().zip(&fd) {
        for (x, y) in a.data().iter().zip(f.data()) {
            let dev = (x - y).norm();
            max_abs = max_abs.max(dev);
            if x.norm() > FD_MAGNITUDE_FLOOR {
                max_rel = max_rel.max(dev / x.norm());
            }
        }
    }
    Ok(GradientReport { analytic, fd, max_relative_deviation: max_rel, max_abs_deviation: max_abs })
}

/// Finite-difference gradient only.
pub fn fd_gradient(problem: &LossProblem, kappas: &[ComplexMatrix], h: f64) -> Result<Vec<ComplexMatrix>> {
    let mut work = kappas.to_vec();
    let mut out = Vec::with_capacity(kappas.len());
    for b in 0..kappas.len() {
        let (rows, cols) = (kappas[b].rows(), kappas[b].cols());
        let mut g = ComplexMatrix::zeros(rows, cols);
        for r in 0..rows {
            for c in 0..cols {
                let orig = kappas[b][(r, c)];
                let mut at = |delta: C64| -> Result<f64> {
                    work[b][(r, c)] = orig + delta;
                    let v = problem.evaluate_stacks(&work, false)?.loss;
                    work[b][(r, c)] = orig;
                    Ok(v)
                };
                let re = (at(C64::new(h, 0.0))? - at(C64::new(-h, 0.0))?) / (4.0 * h);
                let im = (at(C64::new(0.0, h))? - at(C64::new(0.0, -h))?) / (4.0 * h);
                g[(r, c)] = C64::new(re, im);
            }
        }
        out.push(g);
    }
    Ok(out)
}
