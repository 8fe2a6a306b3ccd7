//! Forward diffusion: a pure target pushed through the fixed noise channels.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::channels::{apply, build_forward_sequence, Channel, NoiseSchedule};
use crate::error::{Error, Result};
use crate::state::{bloch_vector, purity, von_neumann_entropy, DensityMatrix, PureState};

/// Default radius for the near-maximally-mixed gate.
pub const NEAR_MIXED_EPS: f64 = 0.1;

/// States `ρ_0 … ρ_{L_f}` with their per-step diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    target: PureState,
    states: Vec<DensityMatrix>,
    purity: Vec<f64>,
    entropy: Vec<f64>,
    fidelity_to_origin: Vec<f64>,
    schedule: Option<NoiseSchedule>,
}

impl Trajectory {
    pub fn target(&self) -> &PureState {
        &self.target
    }

    pub fn states(&self) -> &[DensityMatrix] {
        &self.states
    }

    /// `ρ_t`.
    pub fn state(&self, t: usize) -> &DensityMatrix {
        &self.states[t]
    }

    /// `L_f`.
    pub fn depth(&self) -> usize {
        self.states.len() - 1
    }

    pub fn dim(&self) -> usize {
        self.target.dim()
    }

    pub fn last(&self) -> &DensityMatrix {
        self.states.last().expect("trajectory holds at least the origin")
    }

    pub fn purity(&self) -> &[f64] {
        &self.purity
    }

    /// Von Neumann entropy per step, in bits.
    pub fn entropy(&self) -> &[f64] {
        &self.entropy
    }

    /// `F(ρ_t, ρ_0)` per step.
    pub fn fidelity_to_origin(&self) -> &[f64] {
        &self.fidelity_to_origin
    }

    pub fn schedule(&self) -> Option<&NoiseSchedule> {
        self.schedule.as_ref()
    }
}

/// Applies `channels` in order, `ρ_t = E_t(ρ_{t−1})`.
pub fn run_forward(target: &PureState, channels: &[Channel]) -> Result<Trajectory> {
    let origin = target.projector();
    let mut states = Vec::with_capacity(channels.len() + 1);
    states.push(origin);
    for (t, ch) in channels.iter().enumerate() {
        if ch.dim() != target.dim() {
            return Err(Error::DimensionMismatch(format!(
                "channel {} has dim {} but the target has dim {}",
                t + 1,
                ch.dim(),
                target.dim()
            )));
        }
        let next = apply(ch, &states[t])?;
        states.push(next);
    }
    let purity = states.iter().map(purity).collect();
    let entropy = states.iter().map(von_neumann_entropy).collect::<Result<_>>()?;
    let amps = target.amplitudes();
    let fidelity_to_origin = states.iter().map(|s| s.mat().expectation(amps).re.clamp(0.0, 1.0)).collect();
    Ok(Trajectory { target: target.clone(), states, purity, entropy, fidelity_to_origin, schedule: None })
}

/// Builds the schedule's channels and runs them on `target`.
pub fn simulate(target: &PureState, schedule: &NoiseSchedule) -> Result<Trajectory> {
    let channels = build_forward_sequence(schedule, target.dim())?;
    let mut traj = run_forward(target, &channels)?;
    traj.schedule = Some(schedule.clone());
    Ok(traj)
}

/// Distance of the final state from `I/d`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NearMixedReport {
    pub residual: f64,
    pub pass: bool,
}

/// Passes iff `‖ρ_{L_f} − I/d‖_F < eps`.
pub fn near_mixed_check(traj: &Trajectory, eps: f64) -> NearMixedReport {
    let mixed = DensityMatrix::maximally_mixed(traj.dim());
    let residual = traj.last().mat().distance(mixed.mat());
    NearMixedReport { residual, pass: residual < eps }
}

#[derive(Serialize)]
struct TrajectoryRow {
    step: usize,
    purity: f64,
    entropy_bits: f64,
    fidelity_to_origin: f64,
}

/// CSV `step,purity,entropy_bits,fidelity_to_origin`.
pub fn write_trajectory_csv<W: Write>(traj: &Trajectory, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for step in 0..traj.states.len() {
        w.serialize(TrajectoryRow {
            step,
            purity: traj.purity[step],
            entropy_bits: traj.entropy[step],
            fidelity_to_origin: traj.fidelity_to_origin[step],
        })
        .map_err(csv_error)?;
    }
    w.flush().map_err(|e| Error::Serialization(e.to_string()))
}

/// One row of a Bloch export.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlochRow {
    pub step: usize,
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub purity: f64,
}

/// Bloch coordinates of single-qubit states labelled by `steps`.
pub fn bloch_rows(states: &[(usize, &DensityMatrix)]) -> Result<Vec<BlochRow>> {
    states
        .iter()
        .map(|&(step, rho)| {
            let [x, y, z] = bloch_vector(rho)?;
            Ok(BlochRow { step, x, y, z, purity: purity(rho) })
        })
        .collect()
}

/// CSV `step,x,y,z,purity`.
pub fn write_bloch_csv<W: Write>(rows: &[BlochRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row).map_err(csv_error)?;
    }
    w.flush().map_err(|e| Error::Serialization(e.to_string()))
}

pub(crate) fn csv_error(e: csv::Error) -> Error {
    Error::Serialization(e.to_string())
}
