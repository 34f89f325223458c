//! Dense convex QP / QCQP solver.
//!
//! Solves
//!
//! ```text
//! minimize    ½ xᵀPx + qᵀx
//! subject to  gᵢᵀx ≤ hᵢ                       (linear rows)
//!             ½ xᵀPⱼx + qⱼᵀx + rⱼ ≤ 0          (convex quadratic rows)
//!             A_eq x = b_eq
//! ```
//!
//! with a primal-dual interior point method using Mehrotra predictor-corrector
//! steps. Quadratic rows are linearized at every iterate (slack formulation),
//! so the same Newton system handles both kinds of inequalities. Purely
//! linearly constrained problems get an active-set polish at the end, which
//! brings the KKT residual down to round-off level.
//!
//! Everything is sequential and allocation order is fixed, so identical
//! inputs give bitwise identical outputs.

use nalgebra::{Cholesky, DMatrix, DVector};
use thiserror::Error;

pub type Vector = DVector<f64>;
pub type Matrix = DMatrix<f64>;

/// Default KKT tolerance.
pub const DEFAULT_TOL: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QpError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("matrix is not symmetric positive semidefinite: {0}")]
    NotPsd(String),
    #[error("numerical breakdown: {0}")]
    NumericalBreakdown(String),
}

/// Linear inequality `gᵀx ≤ h`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearRow {
    pub g: Vector,
    pub h: f64,
}

impl LinearRow {
    pub fn new(g: Vector, h: f64) -> Self {
        Self { g, h }
    }
}

/// Convex quadratic inequality `½xᵀPx + qᵀx + r ≤ 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadConstraint {
    pub p: Matrix,
    pub q: Vector,
    pub r: f64,
}

impl QuadConstraint {
    pub fn value(&self, x: &Vector) -> f64 {
        0.5 * x.dot(&(&self.p * x)) + self.q.dot(x) + self.r
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem {
    pub p: Matrix,
    pub q: Vector,
    pub lin_ineq: Vec<LinearRow>,
    pub quad_ineq: Vec<QuadConstraint>,
    pub eq: Option<(Matrix, Vector)>,
}

impl QpProblem {
    pub fn new(p: Matrix, q: Vector) -> Self {
        Self {
            p,
            q,
            lin_ineq: Vec::new(),
            quad_ineq: Vec::new(),
            eq: None,
        }
    }

    pub fn dim(&self) -> usize {
        self.q.len()
    }

    pub fn with_lin(mut self, g: Vector, h: f64) -> Self {
        self.lin_ineq.push(LinearRow::new(g, h));
        self
    }

    pub fn objective(&self, x: &Vector) -> f64 {
        0.5 * x.dot(&(&self.p * x)) + self.q.dot(x)
    }

    /// Checks block dimensions and the symmetric-PSD requirement of every quadratic block.
    pub fn validate(&self) -> Result<(), QpError> {
        let n = self.dim();
        if self.p.nrows() != n || self.p.ncols() != n {
            return Err(QpError::DimensionMismatch(format!(
                "P is {}x{}, q has length {n}",
                self.p.nrows(),
                self.p.ncols()
            )));
        }
        for (i, row) in self.lin_ineq.iter().enumerate() {
            if row.g.len() != n {
                return Err(QpError::DimensionMismatch(format!(
                    "linear row {i} has length {}, expected {n}",
                    row.g.len()
                )));
            }
        }
        for (j, qc) in self.quad_ineq.iter().enumerate() {
            if qc.p.nrows() != n || qc.p.ncols() != n || qc.q.len() != n {
                return Err(QpError::DimensionMismatch(format!(
                    "quadratic row {j} does not match dimension {n}"
                )));
            }
        }
        if let Some((a, b)) = &self.eq {
            if a.ncols() != n || a.nrows() != b.len() {
                return Err(QpError::DimensionMismatch(format!(
                    "equality block is {}x{} with rhs length {}",
                    a.nrows(),
                    a.ncols(),
                    b.len()
                )));
            }
        }
        check_psd(&self.p, "P")?;
        for (j, qc) in self.quad_ineq.iter().enumerate() {
            check_psd(&qc.p, &format!("P_{j}"))?;
        }
        Ok(())
    }
}

/// Symmetry plus attempted Cholesky (with a tiny relative shift) on the nonzero support.
pub fn check_psd(m: &Matrix, name: &str) -> Result<(), QpError> {
    let n = m.nrows();
    let scale = m.amax().max(1.0);
    for i in 0..n {
        for j in 0..i {
            if (m[(i, j)] - m[(j, i)]).abs() > 1e-10 * scale {
                return Err(QpError::NotPsd(format!("{name} is not symmetric")));
            }
        }
    }
    let support: Vec<usize> = (0..n)
        .filter(|&i| (0..n).any(|j| m[(i, j)] != 0.0))
        .collect();
    if support.is_empty() {
        return Ok(());
    }
    let k = support.len();
    let mut sub = Matrix::from_fn(k, k, |a, b| m[(support[a], support[b])]);
    let shift = 1e-10 * scale;
    for a in 0..k {
        sub[(a, a)] += shift;
    }
    if Cholesky::new(sub).is_none() {
        return Err(QpError::NotPsd(format!("{name} failed Cholesky")));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum QpStatus {
    Optimal,
    Infeasible,
    MaxIter,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub x: Vector,
    pub duals_lin: Vector,
    pub duals_quad: Vector,
    pub duals_eq: Vector,
    pub status: QpStatus,
    pub kkt_residual: f64,
    pub objective: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QpSettings {
    pub tol: f64,
    pub max_iter: usize,
    /// Added to the diagonal of every factorized Newton matrix.
    pub regularization: f64,
    /// Dual magnitude beyond which the problem is declared infeasible.
    pub infeasible_dual: f64,
    pub polish: bool,
}

impl Default for QpSettings {
    fn default() -> Self {
        Self {
            tol: DEFAULT_TOL,
            max_iter: 200,
            regularization: 1e-10,
            infeasible_dual: 1e12,
            polish: true,
        }
    }
}

impl QpSettings {
    pub fn with_tol(tol: f64) -> Self {
        Self {
            tol,
            ..Self::default()
        }
    }
}

/// Solve with default settings except the tolerance.
pub fn solve(problem: &QpProblem, tol: f64) -> Result<QpSolution, QpError> {
    solve_with(problem, &QpSettings::with_tol(tol))
}

/// Solve with box bounds folded into the linear rows. Infinite bounds are skipped.
pub fn solve_bounded(
    problem: &QpProblem,
    lower: &Vector,
    upper: &Vector,
    tol: f64,
) -> Result<QpSolution, QpError> {
    let n = problem.dim();
    if lower.len() != n || upper.len() != n {
        return Err(QpError::DimensionMismatch(format!(
            "bounds have lengths {}/{}, expected {n}",
            lower.len(),
            upper.len()
        )));
    }
    let mut boxed = problem.clone();
    push_box_rows(&mut boxed.lin_ineq, lower, upper)?;
    let mut sol = solve(&boxed, tol)?;
    // Report only the caller's own linear duals; bound duals are folded away.
    sol.duals_lin = sol.duals_lin.rows(0, problem.lin_ineq.len()).into_owned();
    Ok(sol)
}

pub(crate) fn push_box_rows(
    rows: &mut Vec<LinearRow>,
    lower: &Vector,
    upper: &Vector,
) -> Result<(), QpError> {
    let n = lower.len();
    for i in 0..n {
        if lower[i] > upper[i] {
            return Err(QpError::DimensionMismatch(format!(
                "lower bound exceeds upper bound at coordinate {i}"
            )));
        }
        if upper[i].is_finite() {
            let mut g = Vector::zeros(n);
            g[i] = 1.0;
            rows.push(LinearRow::new(g, upper[i]));
        }
        if lower[i].is_finite() {
            let mut g = Vector::zeros(n);
            g[i] = -1.0;
            rows.push(LinearRow::new(g, -lower[i]));
        }
    }
    Ok(())
}

struct QuadBlock {
    support: Vec<usize>,
    p_sub: Matrix,
}

impl QuadBlock {
    fn new(p: &Matrix) -> Self {
        let n = p.nrows();
        let support: Vec<usize> = (0..n)
            .filter(|&i| (0..n).any(|j| p[(i, j)] != 0.0))
            .collect();
        let k = support.len();
        let p_sub = Matrix::from_fn(k, k, |a, b| p[(support[a], support[b])]);
        Self { support, p_sub }
    }

    /// Returns (Px, ½xᵀPx) using only the support.
    fn apply(&self, x: &Vector, n: usize) -> (Vector, f64) {
        let xs = Vector::from_iterator(self.support.len(), self.support.iter().map(|&i| x[i]));
        let ps = &self.p_sub * &xs;
        let mut full = Vector::zeros(n);
        for (a, &i) in self.support.iter().enumerate() {
            full[i] = ps[a];
        }
        (full, 0.5 * xs.dot(&ps))
    }

    fn add_scaled_into(&self, h: &mut Matrix, w: f64) {
        for (a, &i) in self.support.iter().enumerate() {
            for (b, &j) in self.support.iter().enumerate() {
                h[(i, j)] += w * self.p_sub[(a, b)];
            }
        }
    }
}

/// Internal evaluation of all inequality values and gradients at `x`.
struct Eval {
    c: Vector,
    /// gradients of the quadratic rows (linear row gradients are constant).
    quad_grads: Vec<Vector>,
}

struct Workspace<'a> {
    prob: &'a QpProblem,
    n: usize,
    m_lin: usize,
    m_quad: usize,
    g: Matrix,
    h: Vector,
    blocks: Vec<QuadBlock>,
    a_eq: Option<&'a Matrix>,
    b_eq: Option<&'a Vector>,
}

impl<'a> Workspace<'a> {
    fn new(prob: &'a QpProblem) -> Self {
        let n = prob.dim();
        let m_lin = prob.lin_ineq.len();
        let mut g = Matrix::zeros(m_lin, n);
        let mut h = Vector::zeros(m_lin);
        for (i, row) in prob.lin_ineq.iter().enumerate() {
            g.set_row(i, &row.g.transpose());
            h[i] = row.h;
        }
        let blocks = prob.quad_ineq.iter().map(|qc| QuadBlock::new(&qc.p)).collect();
        Self {
            prob,
            n,
            m_lin,
            m_quad: prob.quad_ineq.len(),
            g,
            h,
            blocks,
            a_eq: prob.eq.as_ref().map(|(a, _)| a),
            b_eq: prob.eq.as_ref().map(|(_, b)| b),
        }
    }

    fn m(&self) -> usize {
        self.m_lin + self.m_quad
    }

    fn n_eq(&self) -> usize {
        self.b_eq.map_or(0, |b| b.len())
    }

    fn eval(&self, x: &Vector) -> Eval {
        let mut c = Vector::zeros(self.m());
        if self.m_lin > 0 {
            let gx = &self.g * x;
            for i in 0..self.m_lin {
                c[i] = gx[i] - self.h[i];
            }
        }
        let mut quad_grads = Vec::with_capacity(self.m_quad);
        for (j, (qc, blk)) in self.prob.quad_ineq.iter().zip(&self.blocks).enumerate() {
            let (px, half) = blk.apply(x, self.n);
            c[self.m_lin + j] = half + qc.q.dot(x) + qc.r;
            quad_grads.push(px + &qc.q);
        }
        Eval { c, quad_grads }
    }

    /// Jᵀ v for the inequality Jacobian.
    fn jt_mul(&self, ev: &Eval, v: &Vector) -> Vector {
        let mut out = if self.m_lin > 0 {
            self.g.tr_mul(&v.rows(0, self.m_lin).into_owned())
        } else {
            Vector::zeros(self.n)
        };
        for (j, gr) in ev.quad_grads.iter().enumerate() {
            out.axpy(v[self.m_lin + j], gr, 1.0);
        }
        out
    }

    fn j_mul(&self, ev: &Eval, dx: &Vector) -> Vector {
        let mut out = Vector::zeros(self.m());
        if self.m_lin > 0 {
            let gd = &self.g * dx;
            out.rows_mut(0, self.m_lin).copy_from(&gd);
        }
        for (j, gr) in ev.quad_grads.iter().enumerate() {
            out[self.m_lin + j] = gr.dot(dx);
        }
        out
    }

    fn dual_residual(&self, x: &Vector, ev: &Eval, z: &Vector, kappa: &Vector) -> Vector {
        let mut rd = &self.prob.p * x + &self.prob.q + self.jt_mul(ev, z);
        if let Some(a) = self.a_eq {
            rd += a.tr_mul(kappa);
        }
        rd
    }

    fn eq_residual(&self, x: &Vector) -> Vector {
        match (self.a_eq, self.b_eq) {
            (Some(a), Some(b)) => a * x - b,
            _ => Vector::zeros(0),
        }
    }

    fn kkt_residual(&self, x: &Vector, z: &Vector, kappa: &Vector) -> f64 {
        let ev = self.eval(x);
        let rd = self.dual_residual(x, &ev, z, kappa);
        let mut res = rd.amax();
        for i in 0..self.m() {
            res = res.max(ev.c[i].max(0.0));
            res = res.max((z[i] * ev.c[i]).abs());
            res = res.max((-z[i]).max(0.0));
        }
        let re = self.eq_residual(x);
        if re.len() > 0 {
            res = res.max(re.amax());
        }
        res
    }
}

/// Regularized Cholesky; the shift grows if the first attempt fails.
fn factor(mut h: Matrix, reg: f64) -> Result<Cholesky<f64, nalgebra::Dyn>, QpError> {
    let n = h.nrows();
    let scale = h.amax().max(1.0);
    let mut shift = reg;
    for _ in 0..8 {
        let mut hh = h.clone();
        for i in 0..n {
            hh[(i, i)] += shift * scale.min(1e6);
        }
        if let Some(ch) = Cholesky::new(hh) {
            return Ok(ch);
        }
        shift *= 100.0;
    }
    // Last resort: symmetrize and retry once with a large shift.
    h = (&h + h.transpose()) * 0.5;
    for i in 0..n {
        h[(i, i)] += 1e-4 * scale;
    }
    Cholesky::new(h).ok_or_else(|| QpError::NumericalBreakdown("Newton matrix not factorizable".into()))
}

/// Largest step in (0, 1] keeping `v + α dv` above `(1 − τ) v`.
fn max_step(v: &Vector, dv: &Vector, tau: f64) -> f64 {
    let mut alpha: f64 = 1.0;
    for i in 0..v.len() {
        if dv[i] < 0.0 {
            alpha = alpha.min(-tau * v[i] / dv[i]);
        }
    }
    alpha
}

pub fn solve_with(problem: &QpProblem, settings: &QpSettings) -> Result<QpSolution, QpError> {
    problem.validate()?;
    let ws = Workspace::new(problem);
    let n = ws.n;
    let m = ws.m();
    let n_eq = ws.n_eq();

    let mut x = Vector::zeros(n);
    let mut kappa = Vector::zeros(n_eq);

    if m == 0 {
        return solve_equality_only(&ws, settings);
    }

    let ev0 = ws.eval(&x);
    let mut s = ev0.c.map(|c| (-c).max(1.0));
    let mut z = Vector::from_element(m, 1.0);

    let mut status = QpStatus::MaxIter;
    let mut iterations = 0;
    // Lowest-residual iterate; late iterations can lose accuracy on degenerate problems.
    let mut best: Option<(f64, Vector, Vector, Vector)> = None;
    let mut since_best = 0;

    for iter in 0..settings.max_iter {
        iterations = iter;
        let ev = ws.eval(&x);
        let rd = ws.dual_residual(&x, &ev, &z, &kappa);
        let rp = &ev.c + &s;
        let re = ws.eq_residual(&x);
        let mu = s.dot(&z) / m as f64;

        let res = ws.kkt_residual(&x, &z, &kappa);
        if res <= settings.tol {
            status = QpStatus::Optimal;
            best = None;
            break;
        }
        if best.as_ref().is_none_or(|b| res < b.0) {
            best = Some((res, x.clone(), z.clone(), kappa.clone()));
            since_best = 0;
        } else {
            since_best += 1;
        }
        // Past this point the Newton systems are too ill-conditioned to improve the best iterate.
        let best_res = best.as_ref().map_or(f64::INFINITY, |b| b.0);
        if (since_best >= 8 && best_res < 1e-6) || mu < 1e-20 {
            break;
        }
        if z.amax() > settings.infeasible_dual {
            status = QpStatus::Infeasible;
            break;
        }

        // Newton matrix P + Σ zⱼPⱼ + Jᵀ diag(z/s) J.
        let mut hmat = problem.p.clone();
        for (j, blk) in ws.blocks.iter().enumerate() {
            blk.add_scaled_into(&mut hmat, z[ws.m_lin + j]);
        }
        let d = z.component_div(&s);
        if ws.m_lin > 0 {
            let mut gs = ws.g.clone();
            for i in 0..ws.m_lin {
                let w = d[i].sqrt();
                gs.row_mut(i).scale_mut(w);
            }
            hmat.gemm_tr(1.0, &gs, &gs, 1.0);
        }
        for (j, gr) in ev.quad_grads.iter().enumerate() {
            hmat.ger(d[ws.m_lin + j], gr, gr, 1.0);
        }
        let chol = factor(hmat.clone(), settings.regularization)?;
        // Refinement against the unshifted matrix removes the bias of the factorization shift.
        let hsolve = |rhs: &Matrix| -> Matrix {
            let mut sol = chol.solve(rhs);
            for _ in 0..3 {
                let r = rhs - &hmat * &sol;
                if r.amax() <= 1e-15 * rhs.amax().max(1e-300) {
                    break;
                }
                sol += chol.solve(&r);
            }
            sol
        };

        let solve_dir = |rc: &Vector| -> (Vector, Vector, Vector, Vector) {
            // rhs = −r_d − Jᵀ S⁻¹(−r_c + Z r_p)
            let t = (-rc + z.component_mul(&rp)).component_div(&s);
            let rhs = -&rd - ws.jt_mul(&ev, &t);
            let (dx, dk) = match ws.a_eq {
                None => (hsolve(&Matrix::from_column_slice(n, 1, rhs.as_slice())).column(0).into_owned(), Vector::zeros(0)),
                Some(a) => {
                    let hinv_rhs = hsolve(&Matrix::from_column_slice(n, 1, rhs.as_slice())).column(0).into_owned();
                    let hinv_at = hsolve(&a.transpose());
                    let schur = a * &hinv_at;
                    let r = a * &hinv_rhs + &re;
                    let dk = schur
                        .lu()
                        .solve(&r)
                        .unwrap_or_else(|| Vector::zeros(n_eq));
                    (hinv_rhs - hinv_at * &dk, dk)
                }
            };
            let jdx = ws.j_mul(&ev, &dx);
            let ds = -&rp - &jdx;
            let dz = (-rc + z.component_mul(&rp) + z.component_mul(&jdx)).component_div(&s);
            (dx, ds, dz, dk)
        };

        // Predictor.
        let rc_aff = s.component_mul(&z);
        let (_, ds_a, dz_a, _) = solve_dir(&rc_aff);
        let a_aff = max_step(&s, &ds_a, 1.0).min(max_step(&z, &dz_a, 1.0));
        let mu_aff = (&s + &ds_a * a_aff).dot(&(&z + &dz_a * a_aff)) / m as f64;
        let sigma = (mu_aff / mu).clamp(0.0, 1.0).powi(3);

        // Corrector.
        // Keep μ from collapsing ahead of the residuals, which blocks later steps at the boundary.
        let infeas = rd.amax().max(rp.amax()).max(if re.len() > 0 { re.amax() } else { 0.0 });
        let target = (sigma * mu).max((0.5 * mu).min(0.01 * infeas));
        let rc = &rc_aff + ds_a.component_mul(&dz_a) - Vector::from_element(m, target);
        let (dx, ds, dz, dk) = solve_dir(&rc);
        let tau = (1.0 - mu).clamp(0.9, 0.995);
        let alpha = max_step(&s, &ds, tau).min(max_step(&z, &dz, tau));
        if !(alpha > 1e-14) || !dx.iter().all(|v| v.is_finite()) {
            if best.is_none() {
                return Err(QpError::NumericalBreakdown(format!(
                    "step length underflow at iteration {iter} (residual {res:.3e})"
                )));
            }
            break;
        }
        x.axpy(alpha, &dx, 1.0);
        s.axpy(alpha, &ds, 1.0);
        z.axpy(alpha, &dz, 1.0);
        if n_eq > 0 {
            kappa.axpy(alpha, &dk, 1.0);
        }
        // Keep strictly interior against round-off.
        for i in 0..m {
            s[i] = s[i].max(1e-300);
            z[i] = z[i].max(1e-300);
        }
        iterations = iter + 1;
    }

    if status == QpStatus::MaxIter {
        // Final iterate may have converged on the last step.
        let res = ws.kkt_residual(&x, &z, &kappa);
        if res <= settings.tol {
            status = QpStatus::Optimal;
        } else if let Some((best_res, bx, bz, bk)) = best {
            if best_res < res {
                x = bx;
                z = bz;
                kappa = bk;
            }
        }
    }

    let mut duals_lin = z.rows(0, ws.m_lin).into_owned();
    let mut duals_quad = z.rows(ws.m_lin, ws.m_quad).into_owned();
    let mut kkt = ws.kkt_residual(&x, &z, &kappa);

    if status == QpStatus::Optimal && settings.polish && ws.m_quad == 0 && ws.m_lin > 0 {
        if let Some((xp, zp, kp, rp)) = polish(&ws, &z, &s, kkt) {
            x = xp;
            duals_lin = zp;
            kappa = kp;
            kkt = rp;
        }
    }
    // Clamp tiny negative duals produced by round-off.
    duals_lin.apply(|v| *v = v.max(0.0));
    duals_quad.apply(|v| *v = v.max(0.0));

    Ok(QpSolution {
        objective: problem.objective(&x),
        x,
        duals_lin,
        duals_quad,
        duals_eq: kappa,
        status,
        kkt_residual: kkt,
        iterations,
    })
}

fn solve_equality_only(ws: &Workspace<'_>, settings: &QpSettings) -> Result<QpSolution, QpError> {
    let n = ws.n;
    let n_eq = ws.n_eq();
    let dim = n + n_eq;
    let mut k = Matrix::zeros(dim, dim);
    k.view_mut((0, 0), (n, n)).copy_from(&ws.prob.p);
    let mut rhs = Vector::zeros(dim);
    rhs.rows_mut(0, n).copy_from(&(-&ws.prob.q));
    if let (Some(a), Some(b)) = (ws.a_eq, ws.b_eq) {
        k.view_mut((n, 0), (n_eq, n)).copy_from(a);
        k.view_mut((0, n), (n, n_eq)).copy_from(&a.transpose());
        rhs.rows_mut(n, n_eq).copy_from(b);
    }
    // Regularization only enters the factorization; one refinement step on
    // the unregularized system removes its bias from the answer.
    let mut k_reg = k.clone();
    for i in 0..n {
        k_reg[(i, i)] += settings.regularization;
    }
    let lu = k_reg.lu();
    let mut sol = lu
        .solve(&rhs)
        .filter(|v| v.iter().all(|t| t.is_finite()))
        .ok_or_else(|| QpError::NumericalBreakdown("singular KKT system (unbounded problem?)".into()))?;
    if let Some(corr) = lu.solve(&(&rhs - &k * &sol)) {
        if corr.iter().all(|t| t.is_finite()) {
            sol += corr;
        }
    }
    let x = sol.rows(0, n).into_owned();
    let kappa = sol.rows(n, n_eq).into_owned();
    let z = Vector::zeros(0);
    let kkt = ws.kkt_residual(&x, &z, &kappa);
    let status = if kkt <= settings.tol.max(1e-9 * ws.prob.q.amax().max(1.0)) {
        QpStatus::Optimal
    } else {
        return Err(QpError::NumericalBreakdown(format!(
            "unconstrained solve left residual {kkt:.3e}; objective likely unbounded"
        )));
    };
    Ok(QpSolution {
        objective: ws.prob.objective(&x),
        x,
        duals_lin: Vector::zeros(0),
        duals_quad: Vector::zeros(0),
        duals_eq: kappa,
        status,
        kkt_residual: kkt,
        iterations: 0,
    })
}

/// Active-set refinement for linearly constrained problems: solve the KKT
/// system on the rows the interior point iterate identifies as active.
fn polish(
    ws: &Workspace<'_>,
    z: &Vector,
    s: &Vector,
    current: f64,
) -> Option<(Vector, Vector, Vector, f64)> {
    let n = ws.n;
    let n_eq = ws.n_eq();
    let active: Vec<usize> = (0..ws.m_lin).filter(|&i| z[i] > s[i]).collect();
    let na = active.len();
    let dim = n + na + n_eq;
    let mut k = Matrix::zeros(dim, dim);
    k.view_mut((0, 0), (n, n)).copy_from(&ws.prob.p);
    let mut rhs = Vector::zeros(dim);
    rhs.rows_mut(0, n).copy_from(&(-&ws.prob.q));
    for (a, &i) in active.iter().enumerate() {
        for j in 0..n {
            k[(n + a, j)] = ws.g[(i, j)];
            k[(j, n + a)] = ws.g[(i, j)];
        }
        rhs[n + a] = ws.h[i];
    }
    if let (Some(a), Some(b)) = (ws.a_eq, ws.b_eq) {
        k.view_mut((n + na, 0), (n_eq, n)).copy_from(a);
        k.view_mut((0, n + na), (n, n_eq)).copy_from(&a.transpose());
        rhs.rows_mut(n + na, n_eq).copy_from(b);
    }
    let sol = k.lu().solve(&rhs)?;
    if !sol.iter().all(|v| v.is_finite()) {
        return None;
    }
    let xp = sol.rows(0, n).into_owned();
    let mut zp = Vector::zeros(ws.m_lin);
    for (a, &i) in active.iter().enumerate() {
        zp[i] = sol[n + a];
    }
    if zp.iter().any(|&v| v < -1e-12) {
        return None;
    }
    zp.apply(|v| *v = v.max(0.0));
    let kp = sol.rows(n + na, n_eq).into_owned();
    let res = ws.kkt_residual(&xp, &zp, &kp);
    if res <= current {
        Some((xp, zp, kp, res))
    } else {
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(xs: &[f64]) -> Vector {
        Vector::from_column_slice(xs)
    }

    #[test]
    fn unconstrained_scalar() {
        let p = QpProblem::new(Matrix::from_element(1, 1, 1.0), v(&[-1.0]));
        let sol = solve(&p, 1e-8).unwrap();
        assert_eq!(sol.status, QpStatus::Optimal);
        assert!((sol.x[0] - 1.0).abs() < 1e-10);
        assert!(sol.kkt_residual <= 1e-8);
    }

    #[test]
    fn single_active_bound() {
        let p = QpProblem::new(Matrix::from_element(1, 1, 1.0), v(&[0.0])).with_lin(v(&[1.0]), -1.0);
        let sol = solve(&p, 1e-8).unwrap();
        assert_eq!(sol.status, QpStatus::Optimal);
        assert!((sol.x[0] + 1.0).abs() < 1e-10);
        assert!((sol.duals_lin[0] - 1.0).abs() < 1e-10);
    }

    #[test]
    fn bounded_clipped_minimizer() {
        let p = QpProblem::new(Matrix::identity(2, 2), v(&[-2.0, -2.0]));
        let sol = solve_bounded(&p, &v(&[-1.0, -1.0]), &v(&[1.0, 1.0]), 1e-8).unwrap();
        assert!((sol.x[0] - 1.0).abs() < 1e-9 && (sol.x[1] - 1.0).abs() < 1e-9);
        let p = QpProblem::new(Matrix::from_element(1, 1, 1.0), v(&[0.0]));
        let sol = solve_bounded(&p, &v(&[1.0]), &v(&[2.0]), 1e-8).unwrap();
        assert!((sol.x[0] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn quadratic_constraint_disk() {
        // min x + y  s.t. ½(x² + y²) − ½ ≤ 0  →  x = y = −1/√2
        let mut p = QpProblem::new(Matrix::zeros(2, 2), v(&[1.0, 1.0]));
        p.quad_ineq.push(QuadConstraint {
            p: Matrix::identity(2, 2),
            q: v(&[0.0, 0.0]),
            r: -0.5,
        });
        let sol = solve(&p, 1e-9).unwrap();
        assert_eq!(sol.status, QpStatus::Optimal);
        let t = -1.0 / 2f64.sqrt();
        assert!((sol.x[0] - t).abs() < 1e-7, "{}", sol.x);
        assert!((sol.duals_quad[0] - 2f64.sqrt()).abs() < 1e-6);
    }

    #[test]
    fn equality_constrained() {
        // min ½‖x‖² s.t. x₁ + x₂ = 1, x ≥ 0
        let mut p = QpProblem::new(Matrix::identity(2, 2), v(&[0.0, 0.0]));
        p.eq = Some((Matrix::from_row_slice(1, 2, &[1.0, 1.0]), v(&[1.0])));
        p.lin_ineq.push(LinearRow::new(v(&[-1.0, 0.0]), 0.0));
        let sol = solve(&p, 1e-9).unwrap();
        assert!((sol.x[0] - 0.5).abs() < 1e-8 && (sol.x[1] - 0.5).abs() < 1e-8);
        assert!((sol.duals_eq[0] + 0.5).abs() < 1e-8);
    }

    #[test]
    fn infeasible_detected() {
        let p = QpProblem::new(Matrix::identity(1, 1), v(&[0.0]))
            .with_lin(v(&[1.0]), -1.0)
            .with_lin(v(&[-1.0]), -1.0);
        let sol = solve(&p, 1e-8).unwrap();
        assert_ne!(sol.status, QpStatus::Optimal);
    }

    #[test]
    fn rejects_bad_input() {
        let p = QpProblem::new(Matrix::identity(2, 2), v(&[0.0]));
        assert!(matches!(solve(&p, 1e-8), Err(QpError::DimensionMismatch(_))));
        let p = QpProblem::new(Matrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]), v(&[0.0, 0.0]));
        assert!(matches!(solve(&p, 1e-8), Err(QpError::NotPsd(_))));
    }

    #[test]
    fn pure_lp_with_singular_p() {
        // min −x − y over the unit box: singular (zero) P.
        let p = QpProblem::new(Matrix::zeros(2, 2), v(&[-1.0, -1.0]));
        let sol = solve_bounded(&p, &v(&[0.0, 0.0]), &v(&[1.0, 1.0]), 1e-8).unwrap();
        assert_eq!(sol.status, QpStatus::Optimal);
        assert!((sol.x[0] - 1.0).abs() < 1e-8);
    }
}
