//! Dense strictly convex quadratic programming by operator splitting, with
//! active-set polishing, warm starts, and an independent KKT residual check.
//!
//! Problem form:
//!
//! ```text
//! minimize   0.5 z' H z + g' z
//! subject to A z <= b,   lb <= z <= ub
//! ```
//!
//! `H` must be symmetric positive definite. Constraints are stacked as
//! `l <= C z <= u` with `C = [A; I]`, the iteration alternates one cached
//! Cholesky solve with a projection onto the constraint box, and candidate
//! solutions are accepted only once the independently recomputed KKT residual
//! meets the tolerance. Infeasibility is reported through the solution
//! status, never a panic.

use std::fmt;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::{Error, Result};

/// Validated problem data.
#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem {
    pub h: DMatrix<f64>,
    pub g: DVector<f64>,
    pub a_ineq: DMatrix<f64>,
    pub b_ineq: DVector<f64>,
    pub lb: DVector<f64>,
    pub ub: DVector<f64>,
}

impl QpProblem {
    /// Build and validate a problem. `lb`/`ub` entries may be infinite;
    /// everything else must be finite, `h` symmetric positive definite.
    pub fn new(
        h: DMatrix<f64>,
        g: DVector<f64>,
        a_ineq: DMatrix<f64>,
        b_ineq: DVector<f64>,
        lb: DVector<f64>,
        ub: DVector<f64>,
    ) -> Result<Self> {
        let n = h.nrows();
        if h.ncols() != n {
            return Err(Error::DimensionMismatch(format!(
                "H must be square, got {}x{}",
                h.nrows(),
                h.ncols()
            )));
        }
        if g.len() != n || lb.len() != n || ub.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "g/lb/ub must have length {n}"
            )));
        }
        if a_ineq.nrows() != b_ineq.len() || (a_ineq.nrows() > 0 && a_ineq.ncols() != n) {
            return Err(Error::DimensionMismatch(format!(
                "A is {}x{} but b has {} rows for {n} variables",
                a_ineq.nrows(),
                a_ineq.ncols(),
                b_ineq.len()
            )));
        }
        let scale = h.amax().max(1.0);
        let mut max_asymmetry = 0.0f64;
        for j in 0..n {
            for i in 0..j {
                max_asymmetry = max_asymmetry.max((h[(i, j)] - h[(j, i)]).abs());
            }
        }
        if max_asymmetry > 1e-10 * scale {
            return Err(Error::NotSymmetric { max_asymmetry });
        }
        if h.iter().any(|v| !v.is_finite())
            || g.iter().any(|v| !v.is_finite())
            || a_ineq.iter().any(|v| !v.is_finite())
            || b_ineq.iter().any(|v| !v.is_finite())
        {
            return Err(Error::InvalidParameter(
                "H, g, A, b must all be finite".into(),
            ));
        }
        for i in 0..n {
            if lb[i].is_nan() || ub[i].is_nan() || lb[i] > ub[i] {
                return Err(Error::InvalidParameter(format!(
                    "bound {i} invalid: [{}, {}]",
                    lb[i], ub[i]
                )));
            }
        }
        if h.clone().cholesky().is_none() {
            return Err(Error::NotPositiveDefinite);
        }
        Ok(Self {
            h,
            g,
            a_ineq,
            b_ineq,
            lb,
            ub,
        })
    }

    pub fn n_vars(&self) -> usize {
        self.h.nrows()
    }

    pub fn n_ineq(&self) -> usize {
        self.a_ineq.nrows()
    }

    /// Objective value at `z`.
    pub fn objective(&self, z: &DVector<f64>) -> f64 {
        0.5 * z.dot(&(&self.h * z)) + self.g.dot(z)
    }

    /// Write the problem matrices as a CSV bundle (h, g, a_ineq, b_ineq, lb,
    /// ub) into `dir` for offline inspection.
    pub fn dump_csv(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        crate::io::write_matrix_csv(&dir.join("h.csv"), &self.h)?;
        crate::io::write_matrix_csv(&dir.join("g.csv"), &DMatrix::from_column_slice(
            self.g.len(),
            1,
            self.g.as_slice(),
        ))?;
        crate::io::write_matrix_csv(&dir.join("a_ineq.csv"), &self.a_ineq)?;
        crate::io::write_matrix_csv(&dir.join("b_ineq.csv"), &DMatrix::from_column_slice(
            self.b_ineq.len(),
            1,
            self.b_ineq.as_slice(),
        ))?;
        crate::io::write_matrix_csv(&dir.join("lb.csv"), &DMatrix::from_column_slice(
            self.lb.len(),
            1,
            self.lb.as_slice(),
        ))?;
        crate::io::write_matrix_csv(&dir.join("ub.csv"), &DMatrix::from_column_slice(
            self.ub.len(),
            1,
            self.ub.as_slice(),
        ))?;
        Ok(())
    }
}

/// Terminal solver status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QpStatus {
    Optimal,
    Infeasible,
    MaxIter,
}

impl fmt::Display for QpStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            QpStatus::Optimal => "optimal",
            QpStatus::Infeasible => "infeasible",
            QpStatus::MaxIter => "max_iter",
        })
    }
}

/// Solver output. `multipliers` holds the stacked constraint multipliers for
/// the rows of `C = [A; I]`: positive entries push against upper bounds,
/// negative against lower. `kkt_residual` comes from [`kkt_residual`], not
/// from the solver's internal bookkeeping.
#[derive(Debug, Clone)]
pub struct QpSolution {
    pub z: DVector<f64>,
    pub objective: f64,
    pub status: QpStatus,
    pub kkt_residual: f64,
    pub iterations: usize,
    pub multipliers: DVector<f64>,
    /// Per-iteration splitting fixed-point residuals, recorded only when
    /// [`QpSettings::record_fixed_point_residuals`] is set.
    pub fixed_point_residuals: Vec<f64>,
}

/// Solver knobs. The defaults match the shipped controller settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QpSettings {
    pub tol: f64,
    pub max_iter: usize,
    /// Initial splitting penalty; adapted during the run when
    /// `adaptive_rho` is set, and remembered across solves.
    pub rho: f64,
    /// Proximal regularization on the iterate update.
    pub sigma: f64,
    /// Over-relaxation; 1.0 disables it. The non-increasing fixed-point
    /// residual guarantee holds at 1.0 with a fixed rho.
    pub alpha: f64,
    pub adaptive_rho: bool,
    pub polish: bool,
    pub check_interval: usize,
    pub record_fixed_point_residuals: bool,
}

impl Default for QpSettings {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 20_000,
            rho: 0.1,
            sigma: 1e-6,
            alpha: 1.6,
            adaptive_rho: true,
            polish: true,
            check_interval: 25,
            record_fixed_point_residuals: false,
        }
    }
}

/// One-shot solve with default settings at the given tolerance and iteration
/// cap.
pub fn solve_qp(p: &QpProblem, tol: f64, max_iter: usize) -> QpSolution {
    QpSolver::new(QpSettings {
        tol,
        max_iter,
        ..QpSettings::default()
    })
    .solve(p)
}

/// Reusable solver: keeps the adapted penalty and the previous solution for
/// warm starting a sequence of related problems.
#[derive(Debug, Clone)]
pub struct QpSolver {
    pub settings: QpSettings,
    rho: f64,
    warm: Option<(DVector<f64>, DVector<f64>)>,
}

impl QpSolver {
    pub fn new(settings: QpSettings) -> Self {
        Self {
            rho: settings.rho,
            settings,
            warm: None,
        }
    }

    /// Forget the warm start (e.g. when switching to an unrelated problem).
    pub fn reset(&mut self) {
        self.warm = None;
        self.rho = self.settings.rho;
    }

    pub fn solve(&mut self, p: &QpProblem) -> QpSolution {
        let n = p.n_vars();
        let m = p.n_ineq();

        // Unconstrained shortcut: a single definite solve is exact.
        if m == 0 && p.lb.iter().all(|v| *v == f64::NEG_INFINITY)
            && p.ub.iter().all(|v| *v == f64::INFINITY)
        {
            let chol = p.h.clone().cholesky().expect("validated at construction");
            let z = chol.solve(&(-&p.g));
            let y = DVector::zeros(n);
            let kkt = kkt_residual(p, &z, &y);
            return QpSolution {
                objective: p.objective(&z),
                status: QpStatus::Optimal,
                kkt_residual: kkt,
                iterations: 0,
                multipliers: y,
                fixed_point_residuals: Vec::new(),
                z,
            };
        }

        // Stacked constraints l <= C z <= u with C = [A; I].
        let mut c = DMatrix::zeros(m + n, n);
        if m > 0 {
            c.view_mut((0, 0), (m, n)).copy_from(&p.a_ineq);
        }
        for i in 0..n {
            c[(m + i, i)] = 1.0;
        }
        let mut l = DVector::from_element(m + n, f64::NEG_INFINITY);
        let mut u = DVector::zeros(m + n);
        for i in 0..m {
            u[i] = p.b_ineq[i];
        }
        for i in 0..n {
            l[m + i] = p.lb[i];
            u[m + i] = p.ub[i];
        }

        // Jacobi equilibration: d_i = H_ii^(-1/2) keeps mixed weight scales
        // from stalling the splitting. Bounds and multipliers are unaffected
        // because C is rescaled along with the variables.
        let d = DVector::from_fn(n, |i, _| {
            (1.0 / p.h[(i, i)].sqrt()).clamp(1e-6, 1e6)
        });
        let dm = DMatrix::from_diagonal(&d);
        let h_s = &dm * &p.h * &dm;
        let g_s = DVector::from_fn(n, |i, _| p.g[i] * d[i]);
        let c_s = &c * &dm;

        let sigma = self.settings.sigma;
        let alpha = self.settings.alpha;
        let mut rho = self.rho;

        let factor = |rho: f64| {
            let mut msys = &h_s + (c_s.tr_mul(&c_s)) * rho;
            for i in 0..n {
                msys[(i, i)] += sigma;
            }
            msys.cholesky().expect("H PD makes the splitting system PD")
        };
        let mut chol = factor(rho);

        // Warm start in scaled coordinates.
        let (mut x, mut y) = match &self.warm {
            Some((wz, wy)) if wz.len() == n && wy.len() == m + n => (
                DVector::from_fn(n, |i, _| wz[i] / d[i]),
                wy.clone(),
            ),
            _ => (DVector::zeros(n), DVector::zeros(m + n)),
        };
        let mut s = (&c_s * &x).map_with_location(|i, _, v: f64| v.clamp(l[i], u[i]));

        let mut fixed_point_residuals = Vec::new();
        let mut prev_s = s.clone();
        let mut prev_y = y.clone();
        let mut delta_y = DVector::zeros(m + n);
        let mut target = self.settings.tol.max(1e-6);
        let mut best: Option<(DVector<f64>, DVector<f64>, f64)> = None;
        let mut iterations = 0;
        let mut status = QpStatus::MaxIter;

        while iterations < self.settings.max_iter {
            iterations += 1;

            // x-update: proximal quadratic solve.
            let rhs = &x * sigma - &g_s + c_s.tr_mul(&(&s * rho - &y));
            x = chol.solve(&rhs);
            let v = &c_s * &x;
            // Relaxed projection and dual update.
            let vt = &v * alpha + &s * (1.0 - alpha);
            let s_new =
                DVector::from_fn(m + n, |i, _| (vt[i] + y[i] / rho).clamp(l[i], u[i]));
            delta_y = (&vt - &s_new) * rho;
            y += &delta_y;
            s = s_new;

            if self.settings.record_fixed_point_residuals {
                let mut acc = 0.0;
                for i in 0..m + n {
                    let ds = s[i] - prev_s[i];
                    let dy = y[i] - prev_y[i];
                    acc += rho * ds * ds + dy * dy / rho;
                }
                fixed_point_residuals.push(acc.sqrt());
                prev_s.copy_from(&s);
                prev_y.copy_from(&y);
            }

            let at_cap = iterations == self.settings.max_iter;
            if iterations % self.settings.check_interval != 0 && !at_cap {
                continue;
            }

            // Scaled residuals gate the (more expensive) exact verification.
            let r_prim = (&v - &s).amax();
            let r_dual = (&h_s * &x + &g_s + c_s.tr_mul(&y)).amax();

            if r_prim.max(r_dual) <= target || at_cap {
                let z_cand = DVector::from_fn(n, |i, _| x[i] * d[i]);
                let kkt_raw = kkt_residual(p, &z_cand, &y);
                let mut cand = (z_cand, y.clone(), kkt_raw);
                if self.settings.polish {
                    if let Some((zp, yp)) = polish(p, &c, &l, &u, &cand.1) {
                        let kkt_p = kkt_residual(p, &zp, &yp);
                        if kkt_p < cand.2 {
                            cand = (zp, yp, kkt_p);
                        }
                    }
                }
                if best.as_ref().map_or(true, |b| cand.2 < b.2) {
                    best = Some(cand);
                }
                if best.as_ref().unwrap().2 <= self.settings.tol {
                    status = QpStatus::Optimal;
                    break;
                }
                target = (target * 0.1).max(self.settings.tol * 1e-4);
            }

            if primal_infeasibility_certificate(&c_s, &l, &u, &delta_y) {
                status = QpStatus::Infeasible;
                break;
            }

            if self.settings.adaptive_rho && iterations % (4 * self.settings.check_interval) == 0
            {
                let prim_scale = v.amax().max(s.amax()).max(1e-10);
                let dual_scale = (&h_s * &x)
                    .amax()
                    .max(g_s.amax())
                    .max(c_s.tr_mul(&y).amax())
                    .max(1e-10);
                let ratio = ((r_prim / prim_scale) / (r_dual / dual_scale).max(1e-16)).sqrt();
                let rho_new = (rho * ratio).clamp(1e-6, 1e6);
                if rho_new / rho > 5.0 || rho / rho_new > 5.0 {
                    rho = rho_new;
                    chol = factor(rho);
                }
            }
        }

        let _ = delta_y;
        let (z, multipliers, kkt) = best.unwrap_or_else(|| {
            let z_cand = DVector::from_fn(n, |i, _| x[i] * d[i]);
            let kkt_raw = kkt_residual(p, &z_cand, &y);
            (z_cand, y.clone(), kkt_raw)
        });
        if status == QpStatus::MaxIter && kkt <= self.settings.tol {
            status = QpStatus::Optimal;
        }

        self.rho = rho;
        if status != QpStatus::Infeasible {
            self.warm = Some((z.clone(), multipliers.clone()));
        }
        QpSolution {
            objective: p.objective(&z),
            status,
            kkt_residual: kkt,
            iterations,
            multipliers,
            fixed_point_residuals,
            z,
        }
    }
}

/// Active-set refinement: pin the constraints the multipliers say are active,
/// solve the resulting equality-constrained KKT system, and hand back the
/// candidate for independent verification.
fn polish(
    p: &QpProblem,
    c: &DMatrix<f64>,
    l: &DVector<f64>,
    u: &DVector<f64>,
    y: &DVector<f64>,
) -> Option<(DVector<f64>, DVector<f64>)> {
    let n = p.n_vars();
    let rows = c.nrows();
    let thr = 1e-10 * y.amax().max(1.0);
    let mut active = Vec::new();
    let mut bnd = Vec::new();
    for i in 0..rows {
        if y[i] > thr && u[i].is_finite() {
            active.push(i);
            bnd.push(u[i]);
        } else if y[i] < -thr && l[i].is_finite() {
            active.push(i);
            bnd.push(l[i]);
        }
    }
    let na = active.len();
    if na > n {
        return None;
    }
    let mut kkt = DMatrix::zeros(n + na, n + na);
    kkt.view_mut((0, 0), (n, n)).copy_from(&p.h);
    for (r, &i) in active.iter().enumerate() {
        for col in 0..n {
            kkt[(n + r, col)] = c[(i, col)];
            kkt[(col, n + r)] = c[(i, col)];
        }
    }
    let mut rhs = DVector::zeros(n + na);
    for i in 0..n {
        rhs[i] = -p.g[i];
    }
    for (r, &b) in bnd.iter().enumerate() {
        rhs[n + r] = b;
    }
    let lu = kkt.clone().lu();
    let mut sol = lu.solve(&rhs)?;
    // One step of iterative refinement sharpens the equality residual.
    let resid = &kkt * &sol - &rhs;
    if let Some(corr) = lu.solve(&resid) {
        sol -= corr;
    }
    if sol.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let z = DVector::from_fn(n, |i, _| sol[i]);
    let mut y_out = DVector::zeros(rows);
    for (r, &i) in active.iter().enumerate() {
        y_out[i] = sol[n + r];
    }
    Some((z, y_out))
}

/// Certificate that no point satisfies the stacked constraints: a dual
/// direction with vanishing `C' dy` whose support function on the bounds is
/// negative.
fn primal_infeasibility_certificate(
    c: &DMatrix<f64>,
    l: &DVector<f64>,
    u: &DVector<f64>,
    dy: &DVector<f64>,
) -> bool {
    let norm = dy.amax();
    if norm <= 1e-13 {
        return false;
    }
    let eps = 1e-8 * norm;
    if c.tr_mul(dy).amax() > eps {
        return false;
    }
    let mut support = 0.0;
    for i in 0..dy.len() {
        let pos = dy[i].max(0.0);
        let neg = (-dy[i]).max(0.0);
        if pos > eps {
            if !u[i].is_finite() {
                return false;
            }
            support += u[i] * pos;
        }
        if neg > eps {
            if !l[i].is_finite() {
                return false;
            }
            support -= l[i] * neg;
        }
    }
    support < -eps
}

/// Independent KKT residual for a candidate primal/dual pair. Recomputes
/// stationarity, primal feasibility, dual feasibility, and complementarity
/// from the problem data alone; the solver's acceptance gate and all external
/// verification go through this routine.
pub fn kkt_residual(p: &QpProblem, z: &DVector<f64>, multipliers: &DVector<f64>) -> f64 {
    let n = p.n_vars();
    let m = p.n_ineq();
    assert_eq!(z.len(), n, "candidate has wrong dimension");
    assert_eq!(
        multipliers.len(),
        m + n,
        "multipliers must cover [A; I] rows"
    );

    // Stationarity: H z + g + A' y_A + y_box.
    let mut stat = &p.h * z + &p.g;
    if m > 0 {
        let y_a = DVector::from_fn(m, |i, _| multipliers[i]);
        stat += p.a_ineq.tr_mul(&y_a);
    }
    for i in 0..n {
        stat[i] += multipliers[m + i];
    }
    let mut r = stat.amax();

    // Row values, bounds, and the sign/complementarity conditions per row.
    for i in 0..m + n {
        let (val, lo, hi) = if i < m {
            (p.a_ineq.row(i).transpose().dot(z), f64::NEG_INFINITY, p.b_ineq[i])
        } else {
            (z[i - m], p.lb[i - m], p.ub[i - m])
        };
        r = r.max(val - hi).max(lo - val);
        let y_pos = multipliers[i].max(0.0);
        let y_neg = (-multipliers[i]).max(0.0);
        if hi.is_finite() {
            r = r.max((y_pos * (hi - val)).abs());
        } else {
            r = r.max(y_pos);
        }
        if lo.is_finite() {
            r = r.max((y_neg * (val - lo)).abs());
        } else {
            r = r.max(y_neg);
        }
    }
    r
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn box_problem(
        h: DMatrix<f64>,
        g: DVector<f64>,
        lb: DVector<f64>,
        ub: DVector<f64>,
    ) -> QpProblem {
        let n = g.len();
        QpProblem::new(h, g, DMatrix::zeros(0, n), DVector::zeros(0), lb, ub).unwrap()
    }

    fn free_bounds(n: usize) -> (DVector<f64>, DVector<f64>) {
        (
            DVector::from_element(n, f64::NEG_INFINITY),
            DVector::from_element(n, f64::INFINITY),
        )
    }

    /// Independent oracle for box QPs: enumerate all 3^n bound-activity
    /// patterns, solve each equality-constrained system, keep the feasible
    /// minimum.
    fn brute_force_box(p: &QpProblem) -> DVector<f64> {
        let n = p.n_vars();
        assert_eq!(p.n_ineq(), 0);
        let mut best: Option<(f64, DVector<f64>)> = None;
        for pattern in 0..3usize.pow(n as u32) {
            let mut code = pattern;
            let mut fixed = vec![None; n];
            for item in fixed.iter_mut() {
                *item = match code % 3 {
                    0 => None,
                    1 => Some(true),
                    _ => Some(false),
                };
                code /= 3;
            }
            if fixed
                .iter()
                .enumerate()
                .any(|(i, f)| matches!(f, Some(true) if !p.lb[i].is_finite())
                    || matches!(f, Some(false) if !p.ub[i].is_finite()))
            {
                continue;
            }
            let free: Vec<usize> = (0..n).filter(|&i| fixed[i].is_none()).collect();
            let mut z = DVector::zeros(n);
            for i in 0..n {
                match fixed[i] {
                    Some(true) => z[i] = p.lb[i],
                    Some(false) => z[i] = p.ub[i],
                    None => {}
                }
            }
            if !free.is_empty() {
                let nf = free.len();
                let mut hff = DMatrix::zeros(nf, nf);
                let mut rhs = DVector::zeros(nf);
                for (r, &i) in free.iter().enumerate() {
                    rhs[r] = -p.g[i];
                    for (c, &j) in free.iter().enumerate() {
                        hff[(r, c)] = p.h[(i, j)];
                    }
                    for j in 0..n {
                        if fixed[j].is_some() {
                            rhs[r] -= p.h[(i, j)] * z[j];
                        }
                    }
                }
                let Some(zf) = hff.lu().solve(&rhs) else {
                    continue;
                };
                for (r, &i) in free.iter().enumerate() {
                    z[i] = zf[r];
                }
            }
            let feasible = (0..n).all(|i| z[i] >= p.lb[i] - 1e-9 && z[i] <= p.ub[i] + 1e-9);
            if feasible {
                let obj = p.objective(&z);
                if best.as_ref().map_or(true, |(b, _)| obj < *b) {
                    best = Some((obj, z));
                }
            }
        }
        best.expect("box QP with finite bounds always has a feasible pattern").1
    }

    struct SplitMix(u64);
    impl SplitMix {
        fn next(&mut self) -> f64 {
            self.0 = self.0.wrapping_add(0x9e3779b97f4a7c15);
            let mut z = self.0;
            z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
            z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
            ((z ^ (z >> 31)) >> 11) as f64 / (1u64 << 53) as f64
        }
        fn range(&mut self, lo: f64, hi: f64) -> f64 {
            lo + (hi - lo) * self.next()
        }
    }

    fn random_box_qp(rng: &mut SplitMix, n: usize) -> QpProblem {
        let mmat = DMatrix::from_fn(n, n, |_, _| rng.range(-1.0, 1.0));
        let mut h = mmat.tr_mul(&mmat);
        let shift = rng.range(0.1, 1.0);
        for i in 0..n {
            h[(i, i)] += shift;
        }
        let g = DVector::from_fn(n, |_, _| rng.range(-2.0, 2.0));
        let lb = DVector::from_fn(n, |_, _| rng.range(-1.5, 0.2));
        let ub = DVector::from_fn(n, |_, _| rng.range(0.3, 1.5));
        box_problem(h, g, lb, ub)
    }

    #[test]
    fn unconstrained_identity_recovers_target() {
        let c = DVector::from_column_slice(&[1.5, -2.0, 0.25]);
        let (lb, ub) = free_bounds(3);
        let p = box_problem(DMatrix::identity(3, 3), -c.clone(), lb, ub);
        let sol = solve_qp(&p, 1e-8, 1000);
        assert_eq!(sol.status, QpStatus::Optimal);
        assert!(sol.kkt_residual <= 1e-8);
        assert_relative_eq!(sol.z, c, epsilon = 1e-9);
    }

    #[test]
    fn single_variable_clamps_to_bound() {
        // min 0.5 z^2 - z has unconstrained optimum 1; the box stops at 0.5
        // and the bound multiplier picks up the slack gradient.
        let p = box_problem(
            DMatrix::identity(1, 1),
            DVector::from_column_slice(&[-1.0]),
            DVector::from_column_slice(&[-1.0]),
            DVector::from_column_slice(&[0.5]),
        );
        let sol = solve_qp(&p, 1e-8, 2000);
        assert_eq!(sol.status, QpStatus::Optimal);
        assert_relative_eq!(sol.z[0], 0.5, epsilon = 1e-9);
        assert_relative_eq!(sol.multipliers[0], 0.5, epsilon = 1e-7);
        assert!(sol.kkt_residual <= 1e-8);
    }

    #[test]
    fn known_three_variable_inequality_qp() {
        // min 0.5 z'z - 5 z2 subject to -4 z1 - 3 z2 >= -8,
        // 2 z1 + z2 >= 2, -2 z2 + z3 >= 0. Optimum (10/21, 22/21, 44/21).
        let h = DMatrix::identity(3, 3);
        let g = DVector::from_column_slice(&[0.0, -5.0, 0.0]);
        let a = DMatrix::from_row_slice(
            3,
            3,
            &[4.0, 3.0, 0.0, -2.0, -1.0, 0.0, 0.0, 2.0, -1.0],
        );
        let b = DVector::from_column_slice(&[8.0, -2.0, 0.0]);
        let (lb, ub) = free_bounds(3);
        let p = QpProblem::new(h, g, a, b, lb, ub).unwrap();
        let sol = solve_qp(&p, 1e-8, 4000);
        assert_eq!(sol.status, QpStatus::Optimal);
        assert_relative_eq!(sol.z[0], 10.0 / 21.0, epsilon = 1e-6);
        assert_relative_eq!(sol.z[1], 22.0 / 21.0, epsilon = 1e-6);
        assert_relative_eq!(sol.z[2], 44.0 / 21.0, epsilon = 1e-6);
        assert!(sol.kkt_residual <= 1e-8);
    }

    #[test]
    fn random_box_qps_match_enumeration_oracle() {
        let mut rng = SplitMix(12345);
        for trial in 0..60 {
            let n = 1 + trial % 4;
            let p = random_box_qp(&mut rng, n);
            let sol = solve_qp(&p, 1e-8, 20_000);
            assert_eq!(sol.status, QpStatus::Optimal, "trial {trial}");
            assert!(sol.kkt_residual <= 1e-8, "trial {trial}");
            let oracle = brute_force_box(&p);
            assert!(
                (&sol.z - &oracle).amax() <= 1e-7,
                "trial {trial}: solver {:?} oracle {:?}",
                sol.z.as_slice(),
                oracle.as_slice()
            );
        }
    }

    #[test]
    fn contradictory_constraints_report_infeasible() {
        // z <= -1 and z >= 1 cannot hold together.
        let h = DMatrix::identity(1, 1);
        let g = DVector::zeros(1);
        let a = DMatrix::from_row_slice(2, 1, &[1.0, -1.0]);
        let b = DVector::from_column_slice(&[-1.0, -1.0]);
        let p = QpProblem::new(
            h,
            g,
            a,
            b,
            DVector::from_column_slice(&[-5.0]),
            DVector::from_column_slice(&[5.0]),
        )
        .unwrap();
        let sol = solve_qp(&p, 1e-8, 20_000);
        assert_eq!(sol.status, QpStatus::Infeasible);
    }

    #[test]
    fn warm_started_resolve_is_consistent_and_cheap() {
        let mut rng = SplitMix(777);
        let p = random_box_qp(&mut rng, 4);
        let mut solver = QpSolver::new(QpSettings::default());
        let first = solver.solve(&p);
        assert_eq!(first.status, QpStatus::Optimal);
        let second = solver.solve(&p);
        assert_eq!(second.status, QpStatus::Optimal);
        assert!((&first.z - &second.z).amax() <= 1e-7);
        assert!(second.iterations <= first.iterations);
    }

    #[test]
    fn objective_scaling_leaves_argmin_unchanged() {
        let mut rng = SplitMix(4242);
        for trial in 0..10 {
            let p = random_box_qp(&mut rng, 3);
            let scale = 137.0;
            let scaled = QpProblem::new(
                &p.h * scale,
                &p.g * scale,
                p.a_ineq.clone(),
                p.b_ineq.clone(),
                p.lb.clone(),
                p.ub.clone(),
            )
            .unwrap();
            let sol = solve_qp(&p, 1e-10, 20_000);
            let sol_scaled = solve_qp(&scaled, 1e-10, 20_000);
            assert!(
                (&sol.z - &sol_scaled.z).amax() <= 1e-9,
                "trial {trial}: {:?} vs {:?}",
                sol.z.as_slice(),
                sol_scaled.z.as_slice()
            );
            assert_relative_eq!(
                sol_scaled.objective,
                sol.objective * scale,
                max_relative = 1e-7
            );
        }
    }

    #[test]
    fn fixed_point_residuals_decrease_monotonically() {
        // With alpha = 1 and a fixed penalty the splitting operator is
        // averaged, so successive-iterate distances cannot grow.
        let mut rng = SplitMix(31337);
        let p = random_box_qp(&mut rng, 4);
        let mut solver = QpSolver::new(QpSettings {
            alpha: 1.0,
            adaptive_rho: false,
            polish: false,
            record_fixed_point_residuals: true,
            tol: 1e-10,
            ..QpSettings::default()
        });
        let sol = solver.solve(&p);
        let r = &sol.fixed_point_residuals;
        assert!(r.len() > 10);
        for w in r.windows(2) {
            assert!(
                w[1] <= w[0] + 1e-12 * (1.0 + w[0]),
                "residual increased: {} -> {}",
                w[0],
                w[1]
            );
        }
    }

    #[test]
    fn iteration_cap_reports_max_iter() {
        let mut rng = SplitMix(99);
        let p = random_box_qp(&mut rng, 4);
        let mut solver = QpSolver::new(QpSettings {
            tol: 1e-30,
            max_iter: 8,
            polish: false,
            adaptive_rho: false,
            ..QpSettings::default()
        });
        let sol = solver.solve(&p);
        assert_eq!(sol.status, QpStatus::MaxIter);
        assert_eq!(sol.iterations, 8);
        assert!(sol.z.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn indefinite_h_is_rejected() {
        let h = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        let (lb, ub) = free_bounds(2);
        assert!(matches!(
            QpProblem::new(h, DVector::zeros(2), DMatrix::zeros(0, 2), DVector::zeros(0), lb, ub),
            Err(Error::NotPositiveDefinite)
        ));
    }

    #[test]
    fn asymmetric_h_is_rejected() {
        let h = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        let (lb, ub) = free_bounds(2);
        assert!(matches!(
            QpProblem::new(h, DVector::zeros(2), DMatrix::zeros(0, 2), DVector::zeros(0), lb, ub),
            Err(Error::NotSymmetric { .. })
        ));
    }

    #[test]
    fn kkt_residual_flags_wrong_candidates() {
        let p = box_problem(
            DMatrix::identity(2, 2),
            DVector::from_column_slice(&[-1.0, -1.0]),
            DVector::from_column_slice(&[0.0, 0.0]),
            DVector::from_column_slice(&[10.0, 10.0]),
        );
        // True optimum is (1, 1) with zero multipliers.
        let good = kkt_residual(
            &p,
            &DVector::from_column_slice(&[1.0, 1.0]),
            &DVector::zeros(2),
        );
        assert!(good <= 1e-12);
        let bad = kkt_residual(
            &p,
            &DVector::from_column_slice(&[2.0, 0.0]),
            &DVector::zeros(2),
        );
        assert!(bad > 0.5);
    }

    #[test]
    fn dump_csv_writes_bundle() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = SplitMix(5);
        let p = random_box_qp(&mut rng, 3);
        p.dump_csv(dir.path()).unwrap();
        for name in ["h.csv", "g.csv", "a_ineq.csv", "b_ineq.csv", "lb.csv", "ub.csv"] {
            assert!(dir.path().join(name).exists(), "{name} missing");
        }
        let h_back = crate::io::read_matrix_csv(&dir.path().join("h.csv")).unwrap();
        assert_eq!(h_back, p.h);
    }
}
