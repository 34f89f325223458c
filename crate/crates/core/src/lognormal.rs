//! VaR and CVaR of log-normal payoffs `exp(xᵀZ)`, `Z ~ Normal(μ, Σ)`, and the
//! CVaR-difference family approaching `VaR_α` from below.

use std::f64::consts::{PI, SQRT_2};

use nalgebra::{Cholesky, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::adc::{AdcError, AdcFamily, DcEval, OracleCache};
use crate::qp::{Matrix, Vector};

/// Standard normal CDF.
pub fn norm_cdf(t: f64) -> f64 {
    0.5 * libm::erfc(-t / SQRT_2)
}

/// Standard normal upper tail `1 − Φ(t)`, accurate for large `t`.
pub fn norm_sf(t: f64) -> f64 {
    0.5 * libm::erfc(t / SQRT_2)
}

pub fn norm_pdf(t: f64) -> f64 {
    (-0.5 * t * t).exp() / (2.0 * PI).sqrt()
}

/// Standard normal quantile: rational initial guess refined by Newton steps.
pub fn norm_quantile(p: f64) -> f64 {
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    let mut x = acklam(p);
    for _ in 0..3 {
        let pdf = norm_pdf(x);
        if pdf == 0.0 {
            break;
        }
        // Work on the tail closer to the answer to keep relative precision.
        let step = if p > 0.5 {
            (1.0 - p - norm_sf(x)) / pdf
        } else {
            (norm_cdf(x) - p) / pdf
        };
        x -= step;
        if step.abs() < 1e-16 * x.abs().max(1.0) {
            break;
        }
    }
    x
}

fn acklam(p: f64) -> f64 {
    const A: [f64; 6] = [
        -3.969683028665376e1,
        2.209460984245205e2,
        -2.759285104469687e2,
        1.383577518672690e2,
        -3.066479806614716e1,
        2.506628277459239,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e1,
        1.615858368580409e2,
        -1.556989798598866e2,
        6.680131188771972e1,
        -1.328068155288572e1,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-3,
        -3.223964580411365e-1,
        -2.400758277161838,
        -2.549732539343734,
        4.374664141464968,
        2.938163982698783,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-3,
        3.224671290700398e-1,
        2.445134137142996,
        3.754408661907416,
    ];
    let lo = 0.02425;
    if p < lo {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - lo {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        -acklam(1.0 - p)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogNormalModel {
    #[serde(with = "crate::serde_la::vector")]
    pub mu: Vector,
    #[serde(with = "crate::serde_la::matrix")]
    pub sigma: Matrix,
    pub alpha: f64,
    #[serde(with = "crate::serde_la::vector")]
    pub lower: Vector,
    #[serde(with = "crate::serde_la::vector")]
    pub upper: Vector,
}

impl LogNormalModel {
    pub fn validate(&self) -> Result<(), AdcError> {
        let n = self.mu.len();
        if self.sigma.shape() != (n, n) || self.lower.len() != n || self.upper.len() != n {
            return Err(AdcError::DimensionMismatch("log-normal model blocks disagree".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(AdcError::InvalidParameter(format!(
                "alpha = {} is not in (0, 1)",
                self.alpha
            )));
        }
        if (0..n).any(|i| self.lower[i] > self.upper[i]) {
            return Err(AdcError::InvalidParameter("empty box".into()));
        }
        crate::qp::check_psd(&self.sigma, "Sigma")?;
        if Cholesky::new(self.sigma.clone()).is_none() {
            return Err(AdcError::InvalidParameter("Sigma is not positive definite".into()));
        }
        Ok(())
    }

    /// Mean and standard deviation of `xᵀZ`.
    pub fn moments(&self, x: &Vector) -> (f64, f64) {
        let m = x.dot(&self.mu);
        let s = x.dot(&(&self.sigma * x)).max(0.0).sqrt();
        (m, s)
    }

    pub fn var_value(&self, x: &Vector, level: f64) -> f64 {
        let (m, s) = self.moments(x);
        (m + s * norm_quantile(level)).exp()
    }

    pub fn cvar_value(&self, x: &Vector, level: f64) -> f64 {
        let (m, s) = self.moments(x);
        let q = norm_quantile(level);
        (m + 0.5 * s * s).exp() * norm_cdf(s - q) / (1.0 - level)
    }

    pub fn cvar_grad(&self, x: &Vector, level: f64) -> Result<Vector, AdcError> {
        if x.norm() <= 1e-12 {
            return Err(AdcError::AtOrigin);
        }
        let (m, s) = self.moments(x);
        let q = norm_quantile(level);
        let e = (m + 0.5 * s * s).exp();
        let sx = &self.sigma * x;
        let grad = ((&self.mu + &sx) * (e * norm_cdf(s - q)) + &sx * (e * norm_pdf(s - q) / s))
            / (1.0 - level);
        Ok(grad)
    }

    fn sample_box(&self, count: usize, seed: u64) -> Vec<Vector> {
        let n = self.mu.len();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pts: Vec<Vector> = (0..count)
            .map(|_| {
                Vector::from_fn(n, |i, _| {
                    if self.lower[i] < self.upper[i] {
                        rng.random_range(self.lower[i]..=self.upper[i])
                    } else {
                        self.lower[i]
                    }
                })
            })
            .collect();
        if n <= 12 {
            for mask in 0u32..(1 << n) {
                pts.push(Vector::from_fn(n, |i, _| {
                    if mask & (1 << i) != 0 {
                        self.upper[i]
                    } else {
                        self.lower[i]
                    }
                }));
            }
        }
        pts
    }
}

/// `sup_box exp(xᵀμ + s·q_α)·√(2π)·s` by sampling plus corners.
fn sup_scaled_var(model: &LogNormalModel, seed: u64) -> f64 {
    let qa = norm_quantile(model.alpha);
    model
        .sample_box(4096, seed)
        .iter()
        .map(|x| {
            let (m, s) = model.moments(x);
            (m + s * qa).exp() * (2.0 * PI).sqrt() * s
        })
        .fold(0.0, f64::max)
}

/// Bound on `|∂_γ (1/γ)∫_{α−γ}^{α} VaR_t dt|` over the box, with safety factor 1.1.
pub fn c_p_bound(model: &LogNormalModel) -> f64 {
    c_p_bound_for_width(model, model.alpha / 2.0)
}

/// Same bound for averaging widths up to `width`; beyond `α/2` the quantile at `α − width` replaces `q_{α/2}`.
fn c_p_bound_for_width(model: &LogNormalModel, width: f64) -> f64 {
    let alpha = model.alpha;
    let qa = norm_quantile(alpha);
    let qlo = norm_quantile(if width <= alpha / 2.0 { alpha / 2.0 } else { alpha - width });
    1.1 * (0.5 * qa.powi(2).max(qlo.powi(2))).exp() * sup_scaled_var(model, 0x5eed)
}

/// Spectral-norm bound of the CVaR_α Hessian over the box, by finite differences of the gradient.
fn cvar_hessian_bound(model: &LogNormalModel, level: f64) -> f64 {
    let n = model.mu.len();
    let mut best = 0.0f64;
    let pts = model.sample_box(64, 0x4e55);
    for x in &pts {
        if x.norm() < 1e-3 {
            continue;
        }
        let mut hess = Matrix::zeros(n, n);
        let mut ok = true;
        for j in 0..n {
            let h = 1e-5 * (1.0 + x[j].abs());
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[j] += h;
            xm[j] -= h;
            match (model.cvar_grad(&xp, level), model.cvar_grad(&xm, level)) {
                (Ok(gp), Ok(gm)) => hess.set_column(j, &((gp - gm) / (2.0 * h))),
                _ => ok = false,
            }
        }
        if !ok {
            continue;
        }
        let sym = (&hess + hess.transpose()) * 0.5;
        let eig = SymmetricEigen::new(sym);
        best = best.max(eig.eigenvalues.amax());
    }
    best
}

/// `gᵏ = [K(1−α)+1]·CVaR_{α−1/K}`, `hᵏ = K(1−α)·CVaR_α`, `K = k + k̃`.
#[derive(Debug)]
pub struct VarFamily {
    pub model: LogNormalModel,
    pub k_tilde: f64,
    pub c_p: f64,
    hessian_bound: f64,
    cache: OracleCache,
}

impl VarFamily {
    pub fn new(model: LogNormalModel, k_tilde: f64) -> Result<Self, AdcError> {
        model.validate()?;
        let min = 1.0 / model.alpha;
        if !(k_tilde > min) {
            return Err(AdcError::BadOffset { k_tilde, min });
        }
        let c_p = c_p_bound_for_width(&model, 1.0 / k_tilde);
        let hessian_bound = 1.5 * cvar_hessian_bound(&model, model.alpha);
        Ok(Self {
            model,
            k_tilde,
            c_p,
            hessian_bound,
            cache: OracleCache::default(),
        })
    }

    pub fn big_k(&self, k: usize) -> f64 {
        k as f64 + self.k_tilde
    }
}

impl AdcFamily for VarFamily {
    fn name(&self) -> String {
        format!("var(alpha={}, k_tilde={})", self.model.alpha, self.k_tilde)
    }

    fn dim(&self) -> usize {
        self.model.mu.len()
    }

    fn eval(&self, k: usize, x: &Vector) -> Result<DcEval, AdcError> {
        if x.len() != self.dim() {
            return Err(AdcError::DimensionMismatch(format!(
                "point has length {}, expected {}",
                x.len(),
                self.dim()
            )));
        }
        self.cache.get_or_try(k, x, || {
            let kk = self.big_k(k);
            let alpha = self.model.alpha;
            let lo = alpha - 1.0 / kk;
            let wg = kk * (1.0 - alpha) + 1.0;
            let wh = kk * (1.0 - alpha);
            let g = wg * self.model.cvar_value(x, lo);
            let h = wh * self.model.cvar_value(x, alpha);
            let g_grad = self.model.cvar_grad(x, lo)? * wg;
            let h_grad = self.model.cvar_grad(x, alpha)? * wh;
            Ok(DcEval {
                f: g - h,
                g,
                g_grad,
                h,
                h_grad,
            })
        })
    }

    fn ell(&self, k: usize) -> f64 {
        self.big_k(k) * (1.0 - self.model.alpha) * self.hessian_bound
    }

    fn alpha_hat(&self, k: usize) -> f64 {
        self.c_p * (1.0 / self.big_k(k) - 1.0 / self.big_k(k + 1))
    }

    fn alpha_tail(&self, k: usize) -> f64 {
        self.c_p / self.big_k(k)
    }

    fn gamma(&self, k: usize) -> Option<f64> {
        Some(1.0 / self.big_k(k))
    }

    fn limit_value(&self, x: &Vector) -> Result<Option<f64>, AdcError> {
        Ok(Some(self.model.var_value(x, self.model.alpha)))
    }
}
