//! Partial Moreau envelopes of QP optimal-value functions.
//!
//! For `f(x) = min_y {(c + Cx)ᵀy + ½yᵀQy : Ax + By ≤ b}` the level-k member is
//! `fᵏ(x) = min_{z,y} {(c + Cx)ᵀy + ½yᵀQy + ‖z − x‖²/(2γ_k) : Az + By ≤ b}`,
//! split as `gᵏ = ‖x‖²/(2γ_k)` and `hᵏ = gᵏ − fᵏ`.

use nalgebra::Cholesky;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::adc::{AdcError, AdcFamily, DcEval, OracleCache, QuadRepr};
use crate::qp::{self, LinearRow, Matrix, QpProblem, QpSettings, QpSolution, QpStatus, Vector};

/// Tolerance of the QP solves behind every oracle in this module.
pub const ORACLE_QP_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QpValueFunction {
    #[serde(with = "crate::serde_la::vector")]
    pub c: Vector,
    #[serde(rename = "C", with = "crate::serde_la::matrix")]
    pub cmat: Matrix,
    #[serde(rename = "Q", with = "crate::serde_la::matrix")]
    pub q: Matrix,
    #[serde(rename = "A", with = "crate::serde_la::matrix")]
    pub a: Matrix,
    #[serde(rename = "B", with = "crate::serde_la::matrix")]
    pub bmat: Matrix,
    #[serde(with = "crate::serde_la::vector")]
    pub b: Vector,
}

/// Inner solution of the value-function QP at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct InnerSolution {
    pub value: f64,
    pub y: Vector,
    pub mu: Vector,
}

fn accept(sol: QpSolution, what: &str) -> Result<QpSolution, AdcError> {
    match sol.status {
        QpStatus::Optimal => Ok(sol),
        QpStatus::MaxIter if sol.kkt_residual <= 1e-7 => Ok(sol),
        QpStatus::Infeasible => Err(AdcError::InnerInfeasible(what.to_string())),
        QpStatus::MaxIter => Err(AdcError::Qp(qp::QpError::NumericalBreakdown(format!(
            "{what}: iteration cap with residual {:.3e}",
            sol.kkt_residual
        )))),
    }
}

impl QpValueFunction {
    pub fn n(&self) -> usize {
        self.cmat.ncols()
    }

    pub fn d(&self) -> usize {
        self.c.len()
    }

    pub fn l(&self) -> usize {
        self.b.len()
    }

    pub fn validate(&self) -> Result<(), AdcError> {
        let (n, d, l) = (self.n(), self.d(), self.l());
        let shapes = [
            ("C", self.cmat.shape(), (d, n)),
            ("Q", self.q.shape(), (d, d)),
            ("A", self.a.shape(), (l, n)),
            ("B", self.bmat.shape(), (l, d)),
        ];
        for (name, got, want) in shapes {
            if got != want {
                return Err(AdcError::DimensionMismatch(format!(
                    "{name} is {}x{}, expected {}x{}",
                    got.0, got.1, want.0, want.1
                )));
            }
        }
        qp::check_psd(&self.q, "Q")?;
        if Cholesky::new(self.q.clone()).is_none() {
            return Err(AdcError::InvalidParameter("Q is not positive definite".into()));
        }
        Ok(())
    }

    /// Optimal value `f(x)` with its inner primal and dual solutions.
    pub fn solve_inner(&self, x: &Vector) -> Result<InnerSolution, AdcError> {
        if x.len() != self.n() {
            return Err(AdcError::DimensionMismatch(format!(
                "point has length {}, expected {}",
                x.len(),
                self.n()
            )));
        }
        let rhs = &self.b - &self.a * x;
        let mut prob = QpProblem::new(self.q.clone(), &self.c + &self.cmat * x);
        for i in 0..self.l() {
            prob.lin_ineq
                .push(LinearRow::new(self.bmat.row(i).transpose(), rhs[i]));
        }
        let sol = accept(
            qp::solve_with(&prob, &QpSettings::with_tol(ORACLE_QP_TOL))?,
            "value-function QP",
        )?;
        Ok(InnerSolution {
            value: sol.objective,
            y: sol.x,
            mu: sol.duals_lin,
        })
    }

    pub fn value(&self, x: &Vector) -> Result<f64, AdcError> {
        Ok(self.solve_inner(x)?.value)
    }
}

/// `γ_k = γ₀ / (k + k̃)^ρ` and the Lipschitz bound `L` of the lifted function in its first argument.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PmeSchedule {
    pub gamma0: f64,
    pub rho: f64,
    pub k_tilde: u32,
    pub lipschitz_l: f64,
}

impl PmeSchedule {
    pub fn validate(&self) -> Result<(), AdcError> {
        if !(self.gamma0 > 0.0 && self.rho > 0.0 && self.k_tilde >= 1 && self.lipschitz_l >= 0.0)
        {
            return Err(AdcError::InvalidParameter(format!("bad schedule {self:?}")));
        }
        Ok(())
    }

    pub fn gamma(&self, k: usize) -> f64 {
        self.gamma0 / (k as f64 + self.k_tilde as f64).powf(self.rho)
    }

    pub fn tail_constant(&self) -> f64 {
        0.5 * self.lipschitz_l * self.lipschitz_l
    }
}

/// Joint QP solution behind one oracle call.
#[derive(Debug, Clone, PartialEq)]
pub struct JointSolution {
    pub value: f64,
    pub z: Vector,
    pub y: Vector,
    pub mu: Vector,
}

#[derive(Debug)]
pub struct PmeFamily {
    pub function: QpValueFunction,
    pub schedule: PmeSchedule,
    q_inv: Matrix,
    cache: OracleCache,
    label: String,
}

impl PmeFamily {
    pub fn new(function: QpValueFunction, schedule: PmeSchedule) -> Result<Self, AdcError> {
        function.validate()?;
        schedule.validate()?;
        let q_inv = Cholesky::new(function.q.clone())
            .ok_or_else(|| AdcError::InvalidParameter("Q is not positive definite".into()))?
            .inverse();
        Ok(Self {
            label: format!(
                "pme(n={}, d={}, l={}, rho={})",
                function.n(),
                function.d(),
                function.l(),
                schedule.rho
            ),
            function,
            schedule,
            q_inv,
            cache: OracleCache::default(),
        })
    }

    pub fn solve_joint(&self, k: usize, x: &Vector) -> Result<JointSolution, AdcError> {
        let f = &self.function;
        let (n, d, l) = (f.n(), f.d(), f.l());
        if x.len() != n {
            return Err(AdcError::DimensionMismatch(format!(
                "point has length {}, expected {n}",
                x.len()
            )));
        }
        let gamma = self.schedule.gamma(k);
        let mut p = Matrix::zeros(n + d, n + d);
        for i in 0..n {
            p[(i, i)] = 1.0 / gamma;
        }
        p.view_mut((n, n), (d, d)).copy_from(&f.q);
        let mut q = Vector::zeros(n + d);
        q.rows_mut(0, n).copy_from(&(-x / gamma));
        q.rows_mut(n, d).copy_from(&(&f.c + &f.cmat * x));
        let mut prob = QpProblem::new(p, q);
        for i in 0..l {
            let mut g = Vector::zeros(n + d);
            g.rows_mut(0, n).copy_from(&f.a.row(i).transpose());
            g.rows_mut(n, d).copy_from(&f.bmat.row(i).transpose());
            prob.lin_ineq.push(LinearRow::new(g, f.b[i]));
        }
        let sol = accept(
            qp::solve_with(&prob, &QpSettings::with_tol(ORACLE_QP_TOL))?,
            "joint envelope QP",
        )?;
        Ok(JointSolution {
            value: sol.objective + x.norm_squared() / (2.0 * gamma),
            z: sol.x.rows(0, n).into_owned(),
            y: sol.x.rows(n, d).into_owned(),
            mu: sol.duals_lin,
        })
    }
}

impl AdcFamily for PmeFamily {
    fn name(&self) -> String {
        self.label.clone()
    }

    fn dim(&self) -> usize {
        self.function.n()
    }

    fn eval(&self, k: usize, x: &Vector) -> Result<DcEval, AdcError> {
        self.cache.get_or_try(k, x, || {
            let gamma = self.schedule.gamma(k);
            let js = self.solve_joint(k, x)?;
            let g = x.norm_squared() / (2.0 * gamma);
            Ok(DcEval {
                f: js.value,
                g,
                g_grad: x / gamma,
                h: g - js.value,
                h_grad: &js.z / gamma - self.function.cmat.transpose() * &js.y,
            })
        })
    }

    fn ell(&self, k: usize) -> f64 {
        1.0 / self.schedule.gamma(k)
    }

    fn alpha_hat(&self, k: usize) -> f64 {
        self.schedule.tail_constant() * (self.schedule.gamma(k) - self.schedule.gamma(k + 1))
    }

    fn alpha_tail(&self, k: usize) -> f64 {
        self.schedule.tail_constant() * self.schedule.gamma(k)
    }

    fn smooth_flags(&self) -> (bool, bool) {
        (true, false)
    }

    fn g_repr(&self, k: usize) -> Option<QuadRepr> {
        let n = self.function.n();
        Some(QuadRepr::quadratic(
            Matrix::identity(n, n) / self.schedule.gamma(k),
            Vector::zeros(n),
            0.0,
        ))
    }

    /// Dual form `hᵏ(x) = min_{μ ≥ 0} bᵀμ + ‖x − γAᵀμ‖²/(2γ) + ½wᵀQ⁻¹w`, `w = c + Cx + Bᵀμ`.
    fn h_repr(&self, k: usize) -> Option<QuadRepr> {
        let f = &self.function;
        let (n, d, l) = (f.n(), f.d(), f.l());
        let gamma = self.schedule.gamma(k);
        let dim = n + l;
        let mut p = Matrix::zeros(dim, dim);
        for i in 0..n {
            p[(i, i)] = 1.0 / gamma;
        }
        p.view_mut((0, n), (n, l)).copy_from(&(-f.a.transpose()));
        p.view_mut((n, 0), (l, n)).copy_from(&(-&f.a));
        p.view_mut((n, n), (l, l))
            .copy_from(&(&f.a * f.a.transpose() * gamma));
        let mut m = Matrix::zeros(d, dim);
        m.view_mut((0, 0), (d, n)).copy_from(&f.cmat);
        m.view_mut((0, n), (d, l)).copy_from(&f.bmat.transpose());
        let qm = &self.q_inv * &m;
        p += m.transpose() * &qm;
        // Exact symmetry keeps the PSD check happy.
        let p = (&p + p.transpose()) * 0.5;
        let mut q = qm.transpose() * &f.c;
        for j in 0..l {
            q[n + j] += f.b[j];
        }
        let r = 0.5 * f.c.dot(&(&self.q_inv * &f.c));
        Some(QuadRepr {
            aux_dim: l,
            p,
            q,
            r,
        })
    }

    fn gamma(&self, k: usize) -> Option<f64> {
        Some(self.schedule.gamma(k))
    }

    fn limit_value(&self, x: &Vector) -> Result<Option<f64>, AdcError> {
        Ok(Some(self.function.value(x)?))
    }
}

/// `L = safety · max ‖Aᵀμ*(x)‖` over uniform samples of the box plus its corners when `n ≤ 12`.
pub fn estimate_lipschitz(
    f: &QpValueFunction,
    lower: &Vector,
    upper: &Vector,
    n_samples: usize,
    safety: f64,
    seed: u64,
) -> Result<f64, AdcError> {
    let n = f.n();
    if lower.len() != n || upper.len() != n || n_samples == 0 || !(safety >= 1.0) {
        return Err(AdcError::InvalidParameter(
            "box must match the dimension, with n_samples ≥ 1 and safety ≥ 1".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points: Vec<Vector> = (0..n_samples)
        .map(|_| Vector::from_fn(n, |i, _| rng.random_range(lower[i]..=upper[i])))
        .collect();
    if n <= 12 {
        for mask in 0u32..(1 << n) {
            points.push(Vector::from_fn(n, |i, _| {
                if mask & (1 << i) != 0 {
                    upper[i]
                } else {
                    lower[i]
                }
            }));
        }
    }
    let at = f.a.transpose();
    let mut best = 0.0f64;
    for x in &points {
        let inner = f.solve_inner(x)?;
        best = best.max((&at * &inner.mu).norm());
    }
    Ok(safety * best)
}

/// The scalar instance `f(x) = min_{y ≥ x} xy + ½y²`.
pub fn one_dim_example() -> QpValueFunction {
    QpValueFunction {
        c: Vector::from_vec(vec![0.0]),
        cmat: Matrix::from_element(1, 1, 1.0),
        q: Matrix::from_element(1, 1, 1.0),
        a: Matrix::from_element(1, 1, 1.0),
        bmat: Matrix::from_element(1, 1, -1.0),
        b: Vector::from_vec(vec![0.0]),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v1(x: f64) -> Vector {
        Vector::from_vec(vec![x])
    }

    fn grid_value(x: f64) -> f64 {
        // Brute force over y ∈ [−10, 10] at step 1e−5.
        let mut best = f64::INFINITY;
        let steps = 2_000_000;
        for i in 0..=steps {
            let y = -10.0 + 20.0 * i as f64 / steps as f64;
            if y >= x {
                best = best.min(x * y + 0.5 * y * y);
            }
        }
        best
    }

    #[test]
    fn one_dim_values_match_grid() {
        let f = one_dim_example();
        for &x in &[1.0, -1.0, 0.3] {
            let v = f.value(&v1(x)).unwrap();
            assert!((v - grid_value(x)).abs() < 1e-8, "x = {x}: {v}");
        }
        assert!((f.value(&v1(1.0)).unwrap() - 1.5).abs() < 1e-9);
        assert!((f.value(&v1(-1.0)).unwrap() + 0.5).abs() < 1e-9);
    }

    #[test]
    fn inactive_constraint_closed_form() {
        // At x = −1 the unconstrained minimizer y = 1 is feasible: value is −½(Cx)².
        let f = one_dim_example();
        let v = f.value(&v1(-1.0)).unwrap();
        assert!((v + 0.5).abs() < 1e-9);
    }

    #[test]
    fn one_dim_lipschitz() {
        let f = one_dim_example();
        let l = estimate_lipschitz(&f, &v1(-1.0), &v1(1.0), 256, 1.1, 3).unwrap();
        assert!((l - 2.2).abs() < 1e-6, "L = {l}");
        let mut flat = f.clone();
        flat.a = Matrix::zeros(1, 1);
        flat.b = Vector::from_vec(vec![1.0]);
        assert_eq!(estimate_lipschitz(&flat, &v1(-1.0), &v1(1.0), 16, 1.1, 3).unwrap(), 0.0);
    }

    #[test]
    fn envelope_below_limit_within_bound() {
        let sched = PmeSchedule {
            gamma0: 1.0,
            rho: 1.5,
            k_tilde: 1,
            lipschitz_l: 2.2,
        };
        let fam = PmeFamily::new(one_dim_example(), sched).unwrap();
        assert_eq!(fam.ell(3), 1.0 / sched.gamma(3));
        let f0 = fam.eval(0, &v1(0.0)).unwrap().f;
        assert!(f0 <= 1e-12 && f0 >= -sched.gamma(0) * 2.2 * 2.2 / 2.0);
        for i in 0..20 {
            let x = v1(-1.0 + 2.0 * i as f64 / 19.0);
            let f = fam.function.value(&x).unwrap();
            let mut prev = f64::NEG_INFINITY;
            for k in [0, 5, 20, 80] {
                let fk = fam.eval(k, &x).unwrap().f;
                assert!(fk >= prev - 2e-10);
                assert!(fk <= f + 2e-10);
                assert!(f - fk <= sched.gamma(k) * sched.tail_constant() + 2e-10);
                prev = fk;
            }
        }
    }

    #[test]
    fn h_subgradient_inequality_and_repr() {
        let sched = PmeSchedule {
            gamma0: 1.0,
            rho: 1.5,
            k_tilde: 1,
            lipschitz_l: 2.2,
        };
        let fam = PmeFamily::new(one_dim_example(), sched).unwrap();
        let k = 2;
        let repr = fam.h_repr(k).unwrap();
        qp::check_psd(&repr.p, "repr").unwrap();
        let xs: Vec<f64> = (0..15).map(|i| -1.0 + i as f64 / 7.0).collect();
        for &a in &xs {
            let ea = fam.eval(k, &v1(a)).unwrap();
            // The dual form evaluated at the joint-QP multiplier recovers h.
            let js = fam.solve_joint(k, &v1(a)).unwrap();
            assert!((repr.value(&v1(a), &js.mu) - ea.h).abs() < 1e-8);
            for &b in &xs {
                let eb = fam.eval(k, &v1(b)).unwrap();
                assert!(eb.h >= ea.h + ea.h_grad[0] * (b - a) - 4e-10);
            }
        }
    }
}
