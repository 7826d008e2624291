//! Closed-loop disturbance-rejection experiments and tracking metrics.
//!
//! A scenario pairs a piecewise-constant reference with a disturbance
//! schedule. The runner simulates the plant under each requested controller,
//! logging one row per step; metrics are computed per reference segment and
//! reduced to worst-case scalars, so a controller only scores well when it
//! behaves on every segment.

use std::fmt;
use std::path::Path;

use nalgebra::DVector;
use serde::Serialize;

use crate::controller::{
    kdpc_step, nmpc_step, ControllerConfig, ControllerState, NmpcPlan,
};
use crate::plant::{
    DisturbanceChannel, DisturbancePulse, DisturbanceSchedule, Plant, PlantState, VanDerPol,
    VdpParams,
};
use crate::predictor::Predictors;
use crate::qp::{QpSettings, QpSolver, QpStatus};
use crate::{Error, Result};

/// Piecewise-constant signal: holds each value from its breakpoint time
/// until the next. The first breakpoint must sit at t = 0.
#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    breakpoints: Vec<(f64, f64)>,
}

impl Schedule {
    pub fn new(breakpoints: Vec<(f64, f64)>) -> Result<Self> {
        if breakpoints.is_empty() {
            return Err(Error::InvalidParameter(
                "schedule needs at least one breakpoint".into(),
            ));
        }
        if breakpoints[0].0 != 0.0 {
            return Err(Error::InvalidParameter(format!(
                "first breakpoint must be at t = 0, got t = {}",
                breakpoints[0].0
            )));
        }
        for w in breakpoints.windows(2) {
            if !(w[1].0 > w[0].0) {
                return Err(Error::InvalidParameter(format!(
                    "breakpoint times must strictly increase: {} then {}",
                    w[0].0, w[1].0
                )));
            }
        }
        if breakpoints.iter().any(|(t, v)| !t.is_finite() || !v.is_finite()) {
            return Err(Error::InvalidParameter(
                "schedule breakpoints must be finite".into(),
            ));
        }
        Ok(Self { breakpoints })
    }

    pub fn constant(value: f64) -> Result<Self> {
        Self::new(vec![(0.0, value)])
    }

    pub fn value_at(&self, t: f64) -> f64 {
        self.breakpoints
            .iter()
            .rev()
            .find(|(bt, _)| *bt <= t)
            .map_or(self.breakpoints[0].1, |(_, v)| *v)
    }

    pub fn breakpoints(&self) -> &[(f64, f64)] {
        &self.breakpoints
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ControllerKind {
    Kdpc,
    Nmpc,
}

impl fmt::Display for ControllerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ControllerKind::Kdpc => "kdpc",
            ControllerKind::Nmpc => "nmpc",
        })
    }
}

/// One disturbance-rejection experiment definition. `seed` records the data
/// provenance in manifests; the closed loop itself draws no randomness.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub duration: f64,
    pub reference: Schedule,
    pub disturbance: DisturbanceSchedule,
    pub seed: u64,
}

/// Step reference 0 -> 1 at t = 5 s with a 0.2 input-channel pulse on
/// [10, 20), over 30 s.
pub fn input_disturbance_scenario(seed: u64) -> Scenario {
    Scenario {
        name: "input_disturbance".into(),
        duration: 30.0,
        reference: Schedule::new(vec![(0.0, 0.0), (5.0, 1.0)]).expect("static schedule"),
        disturbance: DisturbanceSchedule::new(vec![DisturbancePulse {
            t_start: 10.0,
            t_end: 20.0,
            value: 0.2,
            channel: DisturbanceChannel::Input,
        }])
        .expect("static schedule"),
        seed,
    }
}

/// Same reference with the 0.2 pulse moved to the output channel.
pub fn output_disturbance_scenario(seed: u64) -> Scenario {
    Scenario {
        name: "output_disturbance".into(),
        duration: 30.0,
        reference: Schedule::new(vec![(0.0, 0.0), (5.0, 1.0)]).expect("static schedule"),
        disturbance: DisturbanceSchedule::new(vec![DisturbancePulse {
            t_start: 10.0,
            t_end: 20.0,
            value: 0.2,
            channel: DisturbanceChannel::Output,
        }])
        .expect("static schedule"),
        seed,
    }
}

/// Step-level status in the run log.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepStatus {
    /// History buffer still filling; a zero increment was applied.
    Warmup,
    Optimal,
    Infeasible,
    MaxIter,
}

impl fmt::Display for StepStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StepStatus::Warmup => "warmup",
            StepStatus::Optimal => "optimal",
            StepStatus::Infeasible => "infeasible",
            StepStatus::MaxIter => "max_iter",
        })
    }
}

impl From<QpStatus> for StepStatus {
    fn from(s: QpStatus) -> Self {
        match s {
            QpStatus::Optimal => StepStatus::Optimal,
            QpStatus::Infeasible => StepStatus::Infeasible,
            QpStatus::MaxIter => StepStatus::MaxIter,
        }
    }
}

/// One logged control step. `d` is the total disturbance acting at the step
/// (both channels summed for the log; each acts on its own channel in the
/// simulation).
#[derive(Debug, Clone, PartialEq)]
pub struct StepLog {
    pub t: f64,
    pub y: f64,
    pub y_ref: f64,
    pub u: f64,
    pub delta_u: f64,
    pub d: f64,
    pub cost: f64,
    pub status: StepStatus,
    pub slack_norm: f64,
}

/// A full closed-loop run of one controller.
#[derive(Debug, Clone, PartialEq)]
pub struct ControllerRun {
    pub kind: ControllerKind,
    pub steps: Vec<StepLog>,
    /// Step index at which the plant state became non-finite, if it did.
    pub diverged_at: Option<usize>,
}

impl ControllerRun {
    /// The run as CSV text with a fixed header. Default float formatting
    /// round-trips bits, so equal strings mean bit-identical runs (including
    /// NaN warmup costs, which `==` on the structs would reject).
    pub fn to_csv_string(&self) -> String {
        use std::fmt::Write as _;
        let mut out = String::from("t,y,y_ref,u,delta_u,d,cost,status\n");
        for s in &self.steps {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                s.t, s.y, s.y_ref, s.u, s.delta_u, s.d, s.cost, s.status
            );
        }
        out
    }

    /// Write the run as CSV.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv_string())?;
        Ok(())
    }
}

/// Everything a scenario produced.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResult {
    pub scenario: Scenario,
    pub runs: Vec<ControllerRun>,
}

fn is_divergence(e: &Error) -> bool {
    matches!(e, Error::NonFiniteState | Error::SimulationDiverged { .. })
}

/// Run `scenario` under each requested controller on a Van der Pol plant.
/// The learned controller needs fitted predictors; the baseline replans from
/// the true state with the nominal model (no disturbance knowledge). A
/// diverging plant ends that controller's run early and is recorded, not an
/// error.
pub fn run_scenario(
    scenario: &Scenario,
    kinds: &[ControllerKind],
    predictors: Option<&Predictors>,
    cfg: &ControllerConfig,
    model: &VdpParams,
    x0: PlantState,
) -> Result<ExperimentResult> {
    cfg.validate()?;
    if scenario.duration <= 0.0 || !scenario.duration.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "scenario duration must be positive, got {}",
            scenario.duration
        )));
    }
    let plant = VanDerPol::new(*model);
    let ts = model.ts;
    let n_steps = (scenario.duration / ts).round() as usize;
    let n = cfg.n_horizon;

    let mut runs = Vec::new();
    for kind in kinds {
        let mut steps = Vec::with_capacity(n_steps);
        let mut diverged_at = None;
        let mut x = x0;
        match kind {
            ControllerKind::Kdpc => {
                let p = predictors.ok_or_else(|| {
                    Error::InvalidParameter(
                        "learned controller requested without fitted predictors".into(),
                    )
                })?;
                let mut state = ControllerState::new(cfg.t_ini);
                let mut solver = QpSolver::new(QpSettings::default());
                for k in 0..n_steps {
                    let t = k as f64 * ts;
                    let d_in = scenario.disturbance.input_at(t);
                    let d_out = scenario.disturbance.output_at(t);
                    let y_k = plant.output(&x, d_out);
                    let (u, delta_u, cost, status, slack) = if state.is_warm() {
                        let y_ref = DVector::from_fn(n, |i, _| {
                            scenario.reference.value_at((k + i) as f64 * ts)
                        });
                        let (u, rec) = kdpc_step(&mut state, y_k, &y_ref, p, cfg, &mut solver)?;
                        (
                            u,
                            rec.delta_u_first,
                            rec.optimal_cost,
                            rec.qp_status.into(),
                            rec.slack_norm,
                        )
                    } else {
                        state.record_step(0.0, y_k);
                        (state.u_prev(), 0.0, f64::NAN, StepStatus::Warmup, 0.0)
                    };
                    steps.push(StepLog {
                        t,
                        y: y_k,
                        y_ref: scenario.reference.value_at(t),
                        u,
                        delta_u,
                        d: d_in + d_out,
                        cost,
                        status,
                        slack_norm: slack,
                    });
                    match plant.step(&x, u, d_in) {
                        Ok(next) => x = next,
                        Err(e) if is_divergence(&e) => {
                            diverged_at = Some(k);
                            break;
                        }
                        Err(e) => return Err(e),
                    }
                }
            }
            ControllerKind::Nmpc => {
                let mut plan = NmpcPlan::new(n);
                let mut solver = QpSolver::new(QpSettings::default());
                for k in 0..n_steps {
                    let t = k as f64 * ts;
                    let d_in = scenario.disturbance.input_at(t);
                    let d_out = scenario.disturbance.output_at(t);
                    let y_k = plant.output(&x, d_out);
                    // Preview starts one step ahead: the first planned input
                    // cannot move the current output.
                    let y_ref = DVector::from_fn(n, |i, _| {
                        scenario.reference.value_at((k + 1 + i) as f64 * ts)
                    });
                    let step = nmpc_step(&mut plan, x, &y_ref, model, cfg, &mut solver);
                    let (u, rec) = match step {
                        Ok(pair) => pair,
                        Err(e) if is_divergence(&e) => {
                            diverged_at = Some(k);
                            break;
                        }
                        Err(e) => return Err(e),
                    };
                    steps.push(StepLog {
                        t,
                        y: y_k,
                        y_ref: scenario.reference.value_at(t),
                        u,
                        delta_u: rec.delta_u_first,
                        d: d_in + d_out,
                        cost: rec.optimal_cost,
                        status: rec.qp_status.into(),
                        slack_norm: 0.0,
                    });
                    match plant.step(&x, u, d_in) {
                        Ok(next) => x = next,
                        Err(e) if is_divergence(&e) => {
                            diverged_at = Some(k);
                            break;
                        }
                        Err(e) => return Err(e),
                    }
                }
            }
        }
        runs.push(ControllerRun {
            kind: *kind,
            steps,
            diverged_at,
        });
    }
    Ok(ExperimentResult {
        scenario: scenario.clone(),
        runs,
    })
}

/// Mean absolute tracking error over logged steps with `t0 <= t < t1`.
/// NaN when the window contains no steps.
pub fn mean_abs_error_over(run: &ControllerRun, t0: f64, t1: f64) -> f64 {
    let mut sum = 0.0;
    let mut count = 0usize;
    for s in &run.steps {
        if s.t >= t0 && s.t < t1 {
            sum += (s.y - s.y_ref).abs();
            count += 1;
        }
    }
    if count == 0 {
        f64::NAN
    } else {
        sum / count as f64
    }
}

/// Tracking quality over one reference segment.
#[derive(Debug, Clone, Serialize)]
pub struct SegmentMetrics {
    pub t_start: f64,
    pub t_end: f64,
    pub reference: f64,
    pub rms_error: f64,
    /// Mean absolute error over the last fifth of the segment.
    pub steady_state_error: f64,
    /// Largest excursion past the new reference, signed along the step
    /// direction; zero when the reference did not move.
    pub max_overshoot: f64,
    /// Seconds from segment start until the error stays within 0.02.
    pub settle_time: Option<f64>,
}

/// Worst-case scalars over all segments plus the per-segment detail.
#[derive(Debug, Clone, Serialize)]
pub struct Metrics {
    pub rms_error: f64,
    pub steady_state_error: f64,
    pub max_overshoot: f64,
    /// Largest per-segment settle time; `None` when any segment never
    /// settles.
    pub settle_time: Option<f64>,
    /// Fraction of non-warmup steps whose QP reached optimality.
    pub feasible_fraction: f64,
    pub segments: Vec<SegmentMetrics>,
}

const SETTLE_BAND: f64 = 0.02;

/// Segment the run along the reference breakpoints and score each segment.
pub fn compute_metrics(run: &ControllerRun, reference: &Schedule, duration: f64) -> Metrics {
    let bps = reference.breakpoints();
    let mut segments = Vec::new();
    for (i, &(t_start, value)) in bps.iter().enumerate() {
        let t_end = bps.get(i + 1).map_or(duration, |(t, _)| *t);
        if t_end <= t_start {
            continue;
        }
        let in_seg: Vec<&StepLog> = run
            .steps
            .iter()
            .filter(|s| s.t >= t_start && s.t < t_end)
            .collect();
        if in_seg.is_empty() {
            continue;
        }
        let prev_value = if i == 0 { 0.0 } else { bps[i - 1].1 };
        // signum alone would call +0.0 a positive step.
        let step_dir = if value == prev_value {
            0.0
        } else {
            (value - prev_value).signum()
        };
        let mut sq = 0.0;
        let mut overshoot = 0.0f64;
        for s in &in_seg {
            let e = s.y - value;
            sq += e * e;
            if step_dir != 0.0 {
                overshoot = overshoot.max(step_dir * e);
            }
        }
        let rms_error = (sq / in_seg.len() as f64).sqrt();
        let tail_start = t_end - 0.2 * (t_end - t_start);
        let tail: Vec<f64> = in_seg
            .iter()
            .filter(|s| s.t >= tail_start)
            .map(|s| (s.y - value).abs())
            .collect();
        let steady_state_error = if tail.is_empty() {
            f64::NAN
        } else {
            tail.iter().sum::<f64>() / tail.len() as f64
        };
        let settle_time = in_seg
            .iter()
            .position(|s| {
                in_seg
                    .iter()
                    .skip_while(|q| q.t < s.t)
                    .all(|q| (q.y - value).abs() <= SETTLE_BAND)
            })
            .map(|idx| in_seg[idx].t - t_start);
        segments.push(SegmentMetrics {
            t_start,
            t_end,
            reference: value,
            rms_error,
            steady_state_error,
            max_overshoot: overshoot,
            settle_time,
        });
    }

    let worst = |f: &dyn Fn(&SegmentMetrics) -> f64| {
        segments.iter().map(|s| f(s)).fold(0.0f64, f64::max)
    };
    let settle_time = if segments.iter().all(|s| s.settle_time.is_some()) {
        segments
            .iter()
            .filter_map(|s| s.settle_time)
            .fold(None, |acc: Option<f64>, v| {
                Some(acc.map_or(v, |a| a.max(v)))
            })
    } else {
        None
    };
    let scored: Vec<&StepLog> = run
        .steps
        .iter()
        .filter(|s| s.status != StepStatus::Warmup)
        .collect();
    let feasible_fraction = if scored.is_empty() {
        0.0
    } else {
        scored
            .iter()
            .filter(|s| s.status == StepStatus::Optimal)
            .count() as f64
            / scored.len() as f64
    };
    Metrics {
        rms_error: worst(&|s| s.rms_error),
        steady_state_error: worst(&|s| s.steady_state_error),
        max_overshoot: worst(&|s| s.max_overshoot),
        settle_time,
        feasible_fraction,
        segments,
    }
}
