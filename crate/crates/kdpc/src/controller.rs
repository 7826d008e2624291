//! Online receding-horizon control.
//!
//! Two controllers share the same QP machinery:
//!
//! * [`kdpc_step`] uses the learned predictor maps. The decision variable is
//!   the future input increment sequence plus an output slack, which bakes
//!   integral action into the loop: constant disturbances are absorbed by
//!   the accumulated input.
//! * [`nmpc_step`] is the model-based baseline: successive linearization of
//!   the nominal plant around the current plan, condensed into a QP over
//!   absolute inputs. It has no disturbance model, so sustained disturbances
//!   leave a steady-state offset.
//!
//! Both record per-step diagnostics for the experiment logs.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::plant::{vdp_step, PlantState, VdpParams};
use crate::predictor::Predictors;
use crate::qp::{QpProblem, QpSolver, QpStatus};
use crate::{Error, Result};

/// Tuning knobs shared by both controllers. The increment and slack entries
/// only affect the learned controller; the baseline uses the output weight,
/// its own input weight, the output bounds, and the horizon.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ControllerConfig {
    pub t_ini: usize,
    pub n_horizon: usize,
    /// Output tracking weight.
    pub q: f64,
    /// Input increment weight (learned controller). The default is tempered:
    /// aggressive increments push fresh past windows outside the training
    /// support, where the learned map degrades; a heavier weight keeps the
    /// loop inside it at a small cost in settling time.
    pub r: f64,
    /// Baseline weight on absolute inputs around the nominal steady-state
    /// target. The baseline penalizes input magnitude, not increments, so
    /// this trades tracking stiffness against control effort directly; the
    /// increment weight `r` plays a different role and is kept separate.
    pub nmpc_input_weight: f64,
    /// Slack penalty; large so slack engages only when bounds force it.
    pub lambda_y: f64,
    /// Slack magnitude cap.
    pub sigma_bar: f64,
    pub du_min: f64,
    pub du_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self {
            t_ini: 10,
            n_horizon: 15,
            q: 100.0,
            r: 5.0,
            nmpc_input_weight: 20.0,
            lambda_y: 1e4,
            sigma_bar: 0.5,
            du_min: -2.0,
            du_max: 2.0,
            y_min: -5.0,
            y_max: 5.0,
        }
    }
}

impl ControllerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.t_ini == 0 || self.n_horizon == 0 {
            return Err(Error::InvalidParameter(
                "t_ini and n_horizon must be at least 1".into(),
            ));
        }
        for (name, v) in [
            ("q", self.q),
            ("r", self.r),
            ("nmpc_input_weight", self.nmpc_input_weight),
            ("lambda_y", self.lambda_y),
            ("sigma_bar", self.sigma_bar),
        ] {
            if !v.is_finite() || v <= 0.0 {
                return Err(Error::InvalidParameter(format!(
                    "{name} must be finite and positive, got {v}"
                )));
            }
        }
        if !(self.du_min.is_finite() && self.du_max.is_finite() && self.du_min < self.du_max) {
            return Err(Error::InvalidParameter(format!(
                "increment bounds invalid: [{}, {}]",
                self.du_min, self.du_max
            )));
        }
        if !(self.y_min < self.y_max) {
            return Err(Error::InvalidParameter(format!(
                "output bounds invalid: [{}, {}]",
                self.y_min, self.y_max
            )));
        }
        Ok(())
    }
}

/// Rolling history of applied increments and measured outputs, newest last.
/// The pair recorded at step `k` is the increment chosen at `k` and the
/// output measured at `k`, so at the next step the buffer covers exactly the
/// indices a training past-window covers.
#[derive(Debug, Clone)]
pub struct ControllerState {
    t_ini: usize,
    u_prev: f64,
    du_hist: VecDeque<f64>,
    y_hist: VecDeque<f64>,
}

impl ControllerState {
    pub fn new(t_ini: usize) -> Self {
        Self {
            t_ini,
            u_prev: 0.0,
            du_hist: VecDeque::with_capacity(t_ini),
            y_hist: VecDeque::with_capacity(t_ini),
        }
    }

    /// Last applied absolute input.
    pub fn u_prev(&self) -> f64 {
        self.u_prev
    }

    pub fn is_warm(&self) -> bool {
        self.du_hist.len() == self.t_ini
    }

    /// Push the step-`k` pair and advance the absolute input.
    pub fn record_step(&mut self, delta_u: f64, y: f64) {
        self.u_prev += delta_u;
        self.du_hist.push_back(delta_u);
        self.y_hist.push_back(y);
        if self.du_hist.len() > self.t_ini {
            self.du_hist.pop_front();
            self.y_hist.pop_front();
        }
    }

    /// Stacked past window [increments oldest..newest, outputs
    /// oldest..newest], matching the training window layout.
    pub fn z_ini(&self) -> Result<DVector<f64>> {
        if !self.is_warm() {
            return Err(Error::BufferCold {
                have: self.du_hist.len(),
                need: self.t_ini,
            });
        }
        let mut z = DVector::zeros(2 * self.t_ini);
        for (i, v) in self.du_hist.iter().enumerate() {
            z[i] = *v;
        }
        for (i, v) in self.y_hist.iter().enumerate() {
            z[self.t_ini + i] = *v;
        }
        Ok(z)
    }
}

/// Per-step diagnostics common to both controllers.
#[derive(Debug, Clone)]
pub struct StepRecord {
    pub u_applied: f64,
    pub delta_u_first: f64,
    /// Planned output trajectory over the horizon (excluding slack).
    pub predicted_y: DVector<f64>,
    /// Achieved objective value; NaN when the QP did not reach optimality
    /// and the fallback action was applied.
    pub optimal_cost: f64,
    pub qp_status: QpStatus,
    pub slack_norm: f64,
    pub qp_iterations: usize,
}

/// One learned-controller step.
///
/// `y_k` is the measurement taken at the current step before acting; the
/// reference covers the horizon starting at the current step. On a
/// non-optimal QP the increment falls back to zero. The chosen increment and
/// `y_k` are recorded into the history before returning, so the caller only
/// applies the returned absolute input.
pub fn kdpc_step(
    state: &mut ControllerState,
    y_k: f64,
    y_ref: &DVector<f64>,
    predictors: &Predictors,
    cfg: &ControllerConfig,
    solver: &mut QpSolver,
) -> Result<(f64, StepRecord)> {
    let n = cfg.n_horizon;
    if y_ref.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "reference preview has {} entries for horizon {n}",
            y_ref.len()
        )));
    }
    if predictors.n_horizon != n || predictors.t_ini != cfg.t_ini {
        return Err(Error::DimensionMismatch(format!(
            "predictors were fit for (t_ini={}, n={}), controller wants (t_ini={}, n={})",
            predictors.t_ini, predictors.n_horizon, cfg.t_ini, cfg.n_horizon
        )));
    }

    let z_ini = state.z_ini()?;
    let k = predictors.similarity(&z_ini)?;
    // The past map is trained on deviations from the window's first future
    // output, so the free response is anchored at the fresh measurement.
    // Far from the data the deviation fades to zero and the prediction
    // degrades to "output stays put" instead of inventing a level.
    let c0 = (&predictors.p1 * &k).add_scalar(y_k);
    let e = &c0 - y_ref;
    let p2 = &predictors.p2;

    // Decision z = [du; sigma]. Cost
    //   q |p2 du + sigma + e|^2 + r |du|^2 + lambda_y |sigma|^2.
    let mut h = DMatrix::zeros(2 * n, 2 * n);
    let p2t_p2 = p2.tr_mul(p2);
    for i in 0..n {
        for j in 0..n {
            h[(i, j)] = 2.0 * cfg.q * p2t_p2[(i, j)];
            h[(i, n + j)] = 2.0 * cfg.q * p2[(j, i)];
            h[(n + i, j)] = 2.0 * cfg.q * p2[(i, j)];
        }
        h[(i, i)] += 2.0 * cfg.r;
        h[(n + i, n + i)] = 2.0 * (cfg.q + cfg.lambda_y);
    }
    let p2t_e = p2.tr_mul(&e);
    let mut g = DVector::zeros(2 * n);
    for i in 0..n {
        g[i] = 2.0 * cfg.q * p2t_e[i];
        g[n + i] = 2.0 * cfg.q * e[i];
    }

    // Output corridor: y_min <= c0 + p2 du + sigma <= y_max.
    let mut a = DMatrix::zeros(2 * n, 2 * n);
    let mut b = DVector::zeros(2 * n);
    for i in 0..n {
        for j in 0..n {
            a[(i, j)] = p2[(i, j)];
            a[(n + i, j)] = -p2[(i, j)];
        }
        a[(i, n + i)] = 1.0;
        a[(n + i, n + i)] = -1.0;
        b[i] = cfg.y_max - c0[i];
        b[n + i] = c0[i] - cfg.y_min;
    }
    let mut lb = DVector::from_element(2 * n, -cfg.sigma_bar);
    let mut ub = DVector::from_element(2 * n, cfg.sigma_bar);
    for i in 0..n {
        lb[i] = cfg.du_min;
        ub[i] = cfg.du_max;
    }

    let problem = QpProblem::new(h, g, a, b, lb, ub)?;
    let sol = solver.solve(&problem);

    let record = if sol.status == QpStatus::Optimal {
        let du = DVector::from_fn(n, |i, _| sol.z[i]);
        let sigma = DVector::from_fn(n, |i, _| sol.z[n + i]);
        let predicted_y = &c0 + p2 * &du;
        let track = &predicted_y + &sigma - y_ref;
        let cost = cfg.q * track.norm_squared()
            + cfg.r * du.norm_squared()
            + cfg.lambda_y * sigma.norm_squared();
        StepRecord {
            u_applied: state.u_prev + du[0],
            delta_u_first: du[0],
            predicted_y,
            optimal_cost: cost,
            qp_status: sol.status,
            slack_norm: sigma.amax(),
            qp_iterations: sol.iterations,
        }
    } else {
        StepRecord {
            u_applied: state.u_prev,
            delta_u_first: 0.0,
            predicted_y: c0,
            optimal_cost: f64::NAN,
            qp_status: sol.status,
            slack_norm: 0.0,
            qp_iterations: sol.iterations,
        }
    };
    state.record_step(record.delta_u_first, y_k);
    Ok((record.u_applied, record))
}

/// Input plan carried between baseline steps for warm starting.
#[derive(Debug, Clone)]
pub struct NmpcPlan {
    pub u: Vec<f64>,
    u_prev: f64,
}

impl NmpcPlan {
    pub fn new(n_horizon: usize) -> Self {
        Self {
            u: vec![0.0; n_horizon],
            u_prev: 0.0,
        }
    }
}

/// Nominal rollout and first-order sensitivities of the predicted outputs
/// with respect to the planned inputs.
fn rollout_and_sensitivities(
    x0: PlantState,
    plan: &[f64],
    model: &VdpParams,
) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let n = plan.len();
    let ts = model.ts;
    let mu = model.mu_vdp;
    let mut y_bar = Vec::with_capacity(n);
    let mut gmat = DMatrix::zeros(n, n);
    // s holds d x_{i}/d u, two rows, built up by the chain rule.
    let mut s = DMatrix::zeros(2, n);
    let mut x = x0;
    for i in 0..n {
        let a11 = 1.0;
        let a12 = ts;
        let a21 = -ts - 2.0 * ts * mu * x.x1 * x.x2;
        let a22 = 1.0 + ts * mu * (1.0 - x.x1 * x.x1);
        let mut s_next = DMatrix::zeros(2, n);
        for j in 0..n {
            s_next[(0, j)] = a11 * s[(0, j)] + a12 * s[(1, j)];
            s_next[(1, j)] = a21 * s[(0, j)] + a22 * s[(1, j)];
        }
        s_next[(1, i)] += ts;
        x = vdp_step(&x, plan[i], 0.0, model)?;
        y_bar.push(x.x1);
        for j in 0..n {
            gmat[(i, j)] = s_next[(0, j)];
        }
        s = s_next;
    }
    Ok((y_bar, gmat))
}

/// One baseline step: replans from the true state with at most three
/// successive-linearization passes, then applies the first planned input and
/// shifts the plan. `y_ref` previews the horizon starting one step ahead
/// (the first planned input cannot affect the current output).
pub fn nmpc_step(
    plan: &mut NmpcPlan,
    x_k: PlantState,
    y_ref: &DVector<f64>,
    model: &VdpParams,
    cfg: &ControllerConfig,
    solver: &mut QpSolver,
) -> Result<(f64, StepRecord)> {
    let n = cfg.n_horizon;
    if y_ref.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "reference preview has {} entries for horizon {n}",
            y_ref.len()
        )));
    }
    if plan.u.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "plan has {} entries for horizon {n}",
            plan.u.len()
        )));
    }
    // Steady-state input target from the nominal model: holding u = r keeps
    // the output at r when no disturbance acts.
    let u_ss = y_ref[n - 1];

    let r_u = cfg.nmpc_input_weight;
    let mut status = QpStatus::Optimal;
    let mut iterations = 0;
    for _pass in 0..3 {
        let (y_bar, gmat) = rollout_and_sensitivities(x_k, &plan.u, model)?;
        let mut h = gmat.tr_mul(&gmat) * (2.0 * cfg.q);
        for i in 0..n {
            h[(i, i)] += 2.0 * r_u;
        }
        let track = DVector::from_fn(n, |i, _| y_bar[i] - y_ref[i]);
        let hold = DVector::from_fn(n, |i, _| plan.u[i] - u_ss);
        let g = gmat.tr_mul(&track) * (2.0 * cfg.q) + hold * (2.0 * r_u);
        let mut a = DMatrix::zeros(2 * n, n);
        let mut b = DVector::zeros(2 * n);
        for i in 0..n {
            for j in 0..n {
                a[(i, j)] = gmat[(i, j)];
                a[(n + i, j)] = -gmat[(i, j)];
            }
            b[i] = cfg.y_max - y_bar[i];
            b[n + i] = y_bar[i] - cfg.y_min;
        }
        let lb = DVector::from_element(n, f64::NEG_INFINITY);
        let ub = DVector::from_element(n, f64::INFINITY);
        let problem = QpProblem::new(h, g, a, b, lb, ub)?;
        let sol = solver.solve(&problem);
        iterations += sol.iterations;
        if sol.status != QpStatus::Optimal {
            status = sol.status;
            break;
        }
        for i in 0..n {
            plan.u[i] += sol.z[i];
        }
        if sol.z.amax() <= 1e-8 {
            break;
        }
    }

    // Final rollout for honest diagnostics of the plan actually applied.
    let (y_bar, _) = rollout_and_sensitivities(x_k, &plan.u, model)?;
    let predicted_y = DVector::from_vec(y_bar);
    let cost = (0..n)
        .map(|i| {
            cfg.q * (predicted_y[i] - y_ref[i]).powi(2)
                + r_u * (plan.u[i] - u_ss).powi(2)
        })
        .sum::<f64>();

    let u0 = plan.u[0];
    let record = StepRecord {
        u_applied: u0,
        delta_u_first: u0 - plan.u_prev,
        predicted_y,
        optimal_cost: if status == QpStatus::Optimal {
            cost
        } else {
            f64::NAN
        },
        qp_status: status,
        slack_norm: 0.0,
        qp_iterations: iterations,
    };
    plan.u_prev = u0;
    plan.u.remove(0);
    let tail = *plan.u.last().unwrap_or(&u0);
    plan.u.push(tail);
    Ok((u0, record))
}
