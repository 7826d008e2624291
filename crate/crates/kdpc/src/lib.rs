//! Data-driven predictive control with kernel ridge predictors.
//!
//! The pipeline has an offline phase and an online phase. Offline, excitation
//! data from a plant is sliced into past/future windows ([`data`]), Gaussian
//! RBF Gram matrices are formed over the past windows ([`kernel`]), and two
//! linear predictor maps are fit by regularized regression ([`predictor`]):
//! one carries the past window into the future output trajectory, the other is
//! the analytic linearization of the future-input kernel map around zero
//! increments. Online, a receding-horizon controller ([`controller`]) stacks
//! recent input increments and outputs, predicts the output horizon, and
//! solves a small strictly convex QP ([`qp`]) for the next input increment.
//! Optimizing increments rather than absolute inputs gives the loop integral
//! action, so constant disturbances are rejected without a disturbance model.
//!
//! [`plant`] ships a Van der Pol oscillator benchmark plus a model-based
//! baseline controller target, and [`experiments`] runs disturbance-rejection
//! scenarios and computes tracking metrics.

pub mod collect;
pub mod controller;
pub mod data;
pub mod experiments;
pub mod io;
pub mod kernel;
pub mod plant;
pub mod predictor;
pub mod qp;

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("state became non-finite")]
    NonFiniteState,
    #[error("simulation diverged at step {step}")]
    SimulationDiverged { step: usize },
    #[error("trajectory {index} too short: len {len}, need at least {required}")]
    TrajectoryTooShort {
        index: usize,
        len: usize,
        required: usize,
    },
    #[error("matrix is not symmetric (max asymmetry {max_asymmetry:e})")]
    NotSymmetric { max_asymmetry: f64 },
    #[error("matrix is not positive definite")]
    NotPositiveDefinite,
    #[error("fit residual {residual:e} exceeds bound {bound:e}")]
    FitResidual { residual: f64, bound: f64 },
    #[error("controller buffer not warm: {have} of {need} samples")]
    BufferCold { have: usize, need: usize },
    #[error("artifact error: {0}")]
    Artifact(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
