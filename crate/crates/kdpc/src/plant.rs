//! Benchmark plant: a forced Van der Pol oscillator in discrete time, with
//! input- and output-channel disturbance schedules and a generic simulation
//! loop.
//!
//! Dynamics with sample time `ts` and nonlinearity weight `mu_vdp`:
//!
//! ```text
//! x1+ = x1 + ts * x2
//! x2+ = -ts * x1 + x2 + ts * u + ts * mu_vdp * (1 - x1^2) * x2 + ts * d_in
//! y   = x1 + d_out
//! ```
//!
//! The convention is measure-then-act: `y(k)` is read from `x(k)` before
//! `u(k)` is applied, so `u(k)` first shows up in `y(k+1)` through the state.

use serde::{Deserialize, Serialize};

use crate::data::Trajectory;
use crate::{Error, Result};

/// Two-dimensional plant state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlantState {
    pub x1: f64,
    pub x2: f64,
}

impl PlantState {
    pub fn origin() -> Self {
        Self { x1: 0.0, x2: 0.0 }
    }
}

/// Van der Pol parameters. Defaults: `mu_vdp = 1.0`, `ts = 0.05` s.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VdpParams {
    pub mu_vdp: f64,
    pub ts: f64,
}

impl Default for VdpParams {
    fn default() -> Self {
        Self {
            mu_vdp: 1.0,
            ts: 0.05,
        }
    }
}

/// Which plant channel a disturbance pulse enters through.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DisturbanceChannel {
    Input,
    Output,
}

/// One additive rectangular pulse, active on the half-open interval
/// `[t_start, t_end)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DisturbancePulse {
    pub t_start: f64,
    pub t_end: f64,
    pub value: f64,
    pub channel: DisturbanceChannel,
}

/// A set of disturbance pulses; pulses on the same channel must not overlap.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DisturbanceSchedule {
    pulses: Vec<DisturbancePulse>,
}

impl DisturbanceSchedule {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn new(pulses: Vec<DisturbancePulse>) -> Result<Self> {
        for p in &pulses {
            if !(p.t_start.is_finite() && p.t_end.is_finite() && p.value.is_finite()) {
                return Err(Error::InvalidParameter(
                    "disturbance pulse has non-finite fields".into(),
                ));
            }
            if p.t_end <= p.t_start {
                return Err(Error::InvalidParameter(format!(
                    "disturbance pulse interval [{}, {}) is empty",
                    p.t_start, p.t_end
                )));
            }
        }
        for (i, a) in pulses.iter().enumerate() {
            for b in pulses.iter().skip(i + 1) {
                if a.channel == b.channel && a.t_start < b.t_end && b.t_start < a.t_end {
                    return Err(Error::InvalidParameter(format!(
                        "overlapping {:?}-channel pulses at [{}, {}) and [{}, {})",
                        a.channel, a.t_start, a.t_end, b.t_start, b.t_end
                    )));
                }
            }
        }
        Ok(Self { pulses })
    }

    pub fn pulses(&self) -> &[DisturbancePulse] {
        &self.pulses
    }

    fn value_at(&self, t: f64, channel: DisturbanceChannel) -> f64 {
        self.pulses
            .iter()
            .find(|p| p.channel == channel && p.t_start <= t && t < p.t_end)
            .map_or(0.0, |p| p.value)
    }

    /// Additive input-channel disturbance at time `t`.
    pub fn input_at(&self, t: f64) -> f64 {
        self.value_at(t, DisturbanceChannel::Input)
    }

    /// Additive output-channel disturbance at time `t`.
    pub fn output_at(&self, t: f64) -> f64 {
        self.value_at(t, DisturbanceChannel::Output)
    }
}

/// Discrete-time SISO plant interface. Implementations own their parameters;
/// the state is explicit so controllers with model access can roll it forward.
pub trait Plant {
    fn step(&self, x: &PlantState, u: f64, d_in: f64) -> Result<PlantState>;
    fn output(&self, x: &PlantState, d_out: f64) -> f64;
    fn sample_time(&self) -> f64;
}

/// The Van der Pol benchmark plant.
#[derive(Debug, Clone, Copy, Default)]
pub struct VanDerPol {
    pub params: VdpParams,
}

impl VanDerPol {
    pub fn new(params: VdpParams) -> Self {
        Self { params }
    }
}

impl Plant for VanDerPol {
    fn step(&self, x: &PlantState, u: f64, d_in: f64) -> Result<PlantState> {
        vdp_step(x, u, d_in, &self.params)
    }

    fn output(&self, x: &PlantState, d_out: f64) -> f64 {
        measure(x, d_out)
    }

    fn sample_time(&self) -> f64 {
        self.params.ts
    }
}

/// One Van der Pol step. Errors if the next state is non-finite.
pub fn vdp_step(x: &PlantState, u: f64, d_in: f64, p: &VdpParams) -> Result<PlantState> {
    let ts = p.ts;
    let x1 = x.x1 + ts * x.x2;
    let x2 = -ts * x.x1 + x.x2 + ts * u + ts * p.mu_vdp * (1.0 - x.x1 * x.x1) * x.x2 + ts * d_in;
    if !(x1.is_finite() && x2.is_finite()) {
        return Err(Error::NonFiniteState);
    }
    Ok(PlantState { x1, x2 })
}

/// Measured output: first state plus the output-channel disturbance.
pub fn measure(x: &PlantState, d_out: f64) -> f64 {
    x.x1 + d_out
}

/// Run `inputs` through a plant from `x0`, reading the disturbance schedule
/// at `t = k * ts`. Returns matching-length input/output records; at each
/// step the output is measured before the input is applied.
pub fn simulate(
    plant: &impl Plant,
    x0: PlantState,
    inputs: &[f64],
    disturbance: &DisturbanceSchedule,
) -> Result<Trajectory> {
    let ts = plant.sample_time();
    let mut x = x0;
    let mut y = Vec::with_capacity(inputs.len());
    for (k, &u) in inputs.iter().enumerate() {
        let t = k as f64 * ts;
        y.push(plant.output(&x, disturbance.output_at(t)));
        x = plant
            .step(&x, u, disturbance.input_at(t))
            .map_err(|_| Error::SimulationDiverged { step: k })?;
    }
    Trajectory::new(inputs.to_vec(), y)
}
