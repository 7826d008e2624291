//! Offline predictor learning.
//!
//! Two maps are fit and frozen for online use, each from the episode family
//! built for it (see [`crate::collect`]):
//!
//! * `p2`: sensitivity of the future-input kernel regression at the zero
//!   increment sequence, `p2 = y_f (k_ff + mu I)^-1 J`, where row `j` of `J`
//!   is the analytic kernel gradient at the stored point `d_j`. Fit on the
//!   dither dataset, whose raw future outputs are purely input-driven.
//! * `p1`: ridge-regularized kernel regression from past-window similarity
//!   vectors to future outputs, `p1 = targets (k_pp + lambda I)^-1`. Fit on
//!   the burst dataset; the targets are that dataset's futures with the `p2`
//!   contribution deflated and each window re-expressed as the deviation
//!   from its own first future sample.
//!
//! The online prediction is then affine in the planned increments:
//! `y_hat = p1 k + p2 du`, which is what makes the receding-horizon problem a
//! convex QP. Because the `p1` targets are deviations, the prediction is a
//! deviation too; the caller anchors it at the currently measured output.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::kernel::{median_bandwidth, KernelSpec};
use crate::{Error, Result};

/// How to choose a kernel bandwidth at fit time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BandwidthSpec {
    /// Median pairwise distance over the training points.
    Median,
    /// Median pairwise distance times this factor.
    MedianScaled(f64),
    Fixed(f64),
}

impl BandwidthSpec {
    fn resolve(&self, points: &DMatrix<f64>) -> Result<f64> {
        match self {
            BandwidthSpec::Median => Ok(median_bandwidth(points)),
            BandwidthSpec::MedianScaled(f) => {
                if !f.is_finite() || *f <= 0.0 {
                    return Err(Error::InvalidParameter(format!(
                        "bandwidth scale must be finite and positive, got {f}"
                    )));
                }
                Ok(median_bandwidth(points) * f)
            }
            BandwidthSpec::Fixed(v) => {
                if !v.is_finite() || *v <= 0.0 {
                    return Err(Error::InvalidParameter(format!(
                        "fixed bandwidth must be finite and positive, got {v}"
                    )));
                }
                Ok(*v)
            }
        }
    }
}

/// Regularization and bandwidth choices for [`fit_predictors`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub lambda: f64,
    pub mu: f64,
    pub bandwidth_past: BandwidthSpec,
    pub bandwidth_future: BandwidthSpec,
}

impl Default for FitConfig {
    /// Defaults tuned on the benchmark plant: a wide past kernel so fresh
    /// windows between training points still draw support, a very wide
    /// future kernel so the zero-point linearization is smooth, and light
    /// ridge weights.
    fn default() -> Self {
        Self {
            lambda: 1e-4,
            mu: 1e-6,
            bandwidth_past: BandwidthSpec::MedianScaled(1.5),
            bandwidth_future: BandwidthSpec::MedianScaled(10.0),
        }
    }
}

/// Frozen predictor maps plus everything needed to evaluate them online.
#[derive(Debug, Clone, PartialEq)]
pub struct Predictors {
    pub p1: DMatrix<f64>,
    pub p2: DMatrix<f64>,
    pub kernel_past: KernelSpec,
    pub kernel_future: KernelSpec,
    /// Training past windows, one column per window; queries are compared
    /// against these columns to form the similarity vector.
    pub past_points: DMatrix<f64>,
    pub t_ini: usize,
    pub n_horizon: usize,
    pub n_u: usize,
    pub n_y: usize,
    pub lambda: f64,
    pub mu: f64,
    /// Hash of the burst dataset `p1` was fit on.
    pub dataset_hash_past: String,
    /// Hash of the dither dataset `p2` was fit on.
    pub dataset_hash_future: String,
}

impl Predictors {
    /// Similarity vector of a fresh past window against the training set.
    pub fn similarity(&self, z_ini: &DVector<f64>) -> Result<DVector<f64>> {
        self.kernel_past.similarity_vector(&self.past_points, z_ini)
    }

    /// Affine output prediction over the horizon, as a deviation from the
    /// anchor: add the currently measured output to get absolute values.
    pub fn predict(&self, k: &DVector<f64>, delta_u: &DVector<f64>) -> Result<DVector<f64>> {
        if k.len() != self.p1.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "similarity vector has {} entries, predictor expects {}",
                k.len(),
                self.p1.ncols()
            )));
        }
        if delta_u.len() != self.p2.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "increment plan has {} entries, predictor expects {}",
                delta_u.len(),
                self.p2.ncols()
            )));
        }
        Ok(&self.p1 * k + &self.p2 * delta_u)
    }

    pub fn training_windows(&self) -> usize {
        self.past_points.ncols()
    }
}

/// Owned copy of one matrix column.
pub(crate) fn column_vector(m: &DMatrix<f64>, j: usize) -> DVector<f64> {
    DVector::from_iterator(m.nrows(), m.column(j).iter().copied())
}

fn check_regularizer(name: &str, v: f64) -> Result<()> {
    if !v.is_finite() || v <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "{name} must be finite and positive, got {v}"
        )));
    }
    Ok(())
}

/// Solve `x (k + reg I) = targets` for `x` through a Cholesky factorization
/// of the regularized gram matrix, then verify the result by substitution.
fn ridge_solve(
    k: &DMatrix<f64>,
    targets: &DMatrix<f64>,
    reg: f64,
    residual_bound: f64,
) -> Result<DMatrix<f64>> {
    let t = k.nrows();
    let mut kreg = k.clone();
    for i in 0..t {
        kreg[(i, i)] += reg;
    }
    let chol = kreg.clone().cholesky().ok_or(Error::NotPositiveDefinite)?;
    let x = chol.solve(&targets.transpose()).transpose();
    let residual = (&x * &kreg - targets).amax();
    let bound = residual_bound * targets.amax().max(1.0);
    if !residual.is_finite() || residual > bound {
        return Err(Error::FitResidual { residual, bound });
    }
    Ok(x)
}

/// Fit the past-window map `p1 = y_f (k_pp + lambda I)^-1`.
pub fn fit_p1(k_pp: &DMatrix<f64>, y_f: &DMatrix<f64>, lambda: f64) -> Result<DMatrix<f64>> {
    check_regularizer("lambda", lambda)?;
    if k_pp.nrows() != k_pp.ncols() || y_f.ncols() != k_pp.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "k_pp is {}x{}, y_f has {} columns",
            k_pp.nrows(),
            k_pp.ncols(),
            y_f.ncols()
        )));
    }
    ridge_solve(k_pp, y_f, lambda, 1e-8)
}

/// Representer weights for one query: `alpha = (k_pp + lambda I)^-1 k_vec`.
/// `y_f * alpha` must agree with `p1 * k_vec`; tests pin that identity.
pub fn compute_alpha_p(
    k_pp: &DMatrix<f64>,
    lambda: f64,
    k_vec: &DVector<f64>,
) -> Result<DVector<f64>> {
    check_regularizer("lambda", lambda)?;
    let t = k_pp.nrows();
    if k_vec.len() != t {
        return Err(Error::DimensionMismatch(format!(
            "similarity vector has {} entries for a {t}-window gram matrix",
            k_vec.len()
        )));
    }
    let mut kreg = k_pp.clone();
    for i in 0..t {
        kreg[(i, i)] += lambda;
    }
    let chol = kreg.cholesky().ok_or(Error::NotPositiveDefinite)?;
    Ok(chol.solve(k_vec))
}

/// Analytic gradient rows of the future-input kernel map at the zero
/// increment sequence, one row per training point.
pub fn future_jacobian_at_zero(
    kernel: &KernelSpec,
    points: &DMatrix<f64>,
) -> DMatrix<f64> {
    let dim = points.nrows();
    let t = points.ncols();
    let mut jac = DMatrix::zeros(t, dim);
    for j in 0..t {
        let d_j = column_vector(points, j);
        let row = kernel.rbf_jacobian_row_at_zero(&d_j);
        jac.row_mut(j).copy_from(&row);
    }
    jac
}

/// Fit the increment sensitivity `p2 = y_f (k_ff + mu I)^-1 J`.
pub fn fit_p2(
    k_ff: &DMatrix<f64>,
    y_f: &DMatrix<f64>,
    mu: f64,
    jacobian: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    check_regularizer("mu", mu)?;
    if k_ff.nrows() != k_ff.ncols()
        || y_f.ncols() != k_ff.nrows()
        || jacobian.nrows() != k_ff.nrows()
    {
        return Err(Error::DimensionMismatch(format!(
            "k_ff is {}x{}, y_f has {} columns, jacobian has {} rows",
            k_ff.nrows(),
            k_ff.ncols(),
            y_f.ncols(),
            jacobian.nrows()
        )));
    }
    let t = k_ff.nrows();
    let mut kreg = k_ff.clone();
    for i in 0..t {
        kreg[(i, i)] += mu;
    }
    let chol = kreg.clone().cholesky().ok_or(Error::NotPositiveDefinite)?;
    let w = chol.solve(jacobian);
    let residual = (&kreg * &w - jacobian).amax();
    let bound = 1e-8 * jacobian.amax().max(1.0);
    if !residual.is_finite() || residual > bound {
        return Err(Error::FitResidual { residual, bound });
    }
    Ok(y_f * w)
}

/// Fit both predictor maps, each from its own dataset.
///
/// `ds_past` supplies the past-window map: its windows should span the
/// operating region with frozen future inputs, so the recorded futures are
/// free responses. `ds_future` supplies the increment sensitivity: its
/// windows should start from rest, so the recorded futures are purely
/// input-driven. Fitting each map on data where the other contribution
/// vanishes keeps either fit's error out of the other's targets; regressing
/// both maps on one excitation record instead lets the excitation's serial
/// correlation bleed between them and can flip the fitted sensitivity's
/// sign.
pub fn fit_predictors(ds_past: &Dataset, ds_future: &Dataset, cfg: &FitConfig) -> Result<Predictors> {
    if ds_past.columns() == 0 || ds_future.columns() == 0 {
        return Err(Error::InvalidParameter(
            "both fit datasets need at least one window".into(),
        ));
    }
    if ds_past.t_ini != ds_future.t_ini
        || ds_past.n_horizon != ds_future.n_horizon
        || ds_past.n_u != ds_future.n_u
        || ds_past.n_y != ds_future.n_y
    {
        return Err(Error::DimensionMismatch(format!(
            "window shapes disagree: past (t_ini={}, n={}), future (t_ini={}, n={})",
            ds_past.t_ini, ds_past.n_horizon, ds_future.t_ini, ds_future.n_horizon
        )));
    }
    check_regularizer("lambda", cfg.lambda)?;
    check_regularizer("mu", cfg.mu)?;

    let kernel_future = KernelSpec::gaussian_rbf(cfg.bandwidth_future.resolve(&ds_future.d_f_u)?)?;
    let k_ff = kernel_future.gram(&ds_future.d_f_u);
    let jac = future_jacobian_at_zero(&kernel_future, &ds_future.d_f_u);
    let p2 = fit_p2(&k_ff, &ds_future.y_f, cfg.mu, &jac)?;

    let kernel_past = KernelSpec::gaussian_rbf(cfg.bandwidth_past.resolve(&ds_past.d_ini)?)?;
    let k_pp = kernel_past.gram(&ds_past.d_ini);
    // Deflate whatever future inputs the past dataset does carry (zero for a
    // frozen-input collection), then re-express each window relative to its
    // first future sample so the map predicts deviations from the anchor.
    let mut targets = &ds_past.y_f - &p2 * &ds_past.d_f_u;
    let n_y = ds_past.n_y;
    for mut col in targets.column_iter_mut() {
        for c in 0..n_y {
            let base = col[c];
            for i in (c..col.len()).step_by(n_y) {
                col[i] -= base;
            }
        }
    }
    let p1 = fit_p1(&k_pp, &targets, cfg.lambda)?;

    Ok(Predictors {
        p1,
        p2,
        kernel_past,
        kernel_future,
        past_points: ds_past.d_ini.clone(),
        t_ini: ds_past.t_ini,
        n_horizon: ds_past.n_horizon,
        n_u: ds_past.n_u,
        n_y: ds_past.n_y,
        lambda: cfg.lambda,
        mu: cfg.mu,
        dataset_hash_past: crate::io::dataset_hash(ds_past),
        dataset_hash_future: crate::io::dataset_hash(ds_future),
    })
}

/// Open-loop prediction quality of fitted predictors over a window dataset.
#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    pub per_step_rmse: Vec<f64>,
    pub overall_rmse: f64,
    pub windows: usize,
}

/// Predict every window of `ds` from its own past and planned increments,
/// anchored at the window's first future sample, and compare against the
/// recorded outputs.
pub fn open_loop_validate(p: &Predictors, ds: &Dataset) -> Result<ValidationReport> {
    if ds.columns() == 0 {
        return Err(Error::InvalidParameter(
            "validation dataset has no windows".into(),
        ));
    }
    if ds.n_horizon != p.n_horizon || ds.t_ini != p.t_ini {
        return Err(Error::DimensionMismatch(format!(
            "validation windows are (t_ini={}, n={}), predictors expect (t_ini={}, n={})",
            ds.t_ini, ds.n_horizon, p.t_ini, p.n_horizon
        )));
    }
    let n = p.n_horizon * p.n_y;
    let mut sq = vec![0.0f64; n];
    for j in 0..ds.columns() {
        let z_ini = column_vector(&ds.d_ini, j);
        let du = column_vector(&ds.d_f_u, j);
        let k = p.similarity(&z_ini)?;
        let y_hat = p.predict(&k, &du)?;
        for i in 0..n {
            let anchor = ds.y_f[(i % p.n_y, j)];
            let e = anchor + y_hat[i] - ds.y_f[(i, j)];
            sq[i] += e * e;
        }
    }
    let windows = ds.columns();
    let per_step_rmse: Vec<f64> = sq.iter().map(|s| (s / windows as f64).sqrt()).collect();
    let overall_rmse =
        (sq.iter().sum::<f64>() / (windows * n) as f64).sqrt();
    Ok(ValidationReport {
        per_step_rmse,
        overall_rmse,
        windows,
    })
}
