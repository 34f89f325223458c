//! Approachable difference-of-convex families and their convex/concave models.

use std::collections::HashMap;
use std::fmt;
use std::sync::{Arc, Mutex};

use thiserror::Error;

use crate::convex1d::{Convex1dError, MonotoneSplit};
use crate::qp::{Matrix, QpError, Vector};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AdcError {
    #[error("inner problem infeasible: {0}")]
    InnerInfeasible(String),
    #[error("oracle refuses a gradient at the origin")]
    AtOrigin,
    #[error("offset {k_tilde} too small: need k_tilde > {min}")]
    BadOffset { k_tilde: f64, min: f64 },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid family parameters: {0}")]
    InvalidParameter(String),
    #[error(transparent)]
    Qp(#[from] QpError),
    #[error(transparent)]
    Convex1d(#[from] Convex1dError),
}

/// Everything one oracle call returns at `(k, x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DcEval {
    pub f: f64,
    pub g: f64,
    pub g_grad: Vector,
    pub h: f64,
    pub h_grad: Vector,
}

/// Exact convex representation `φ(x) = min_{u ≥ 0} ½[x;u]ᵀP[x;u] + qᵀ[x;u] + r`.
///
/// Lets the subproblem place `w ≥ φ(x)` as one quadratic constraint in `(x, u, w)`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadRepr {
    pub aux_dim: usize,
    pub p: Matrix,
    pub q: Vector,
    pub r: f64,
}

impl QuadRepr {
    pub fn value(&self, x: &Vector, u: &Vector) -> f64 {
        let mut xu = Vector::zeros(x.len() + u.len());
        xu.rows_mut(0, x.len()).copy_from(x);
        xu.rows_mut(x.len(), u.len()).copy_from(u);
        0.5 * xu.dot(&(&self.p * &xu)) + self.q.dot(&xu) + self.r
    }

    /// Representation with no auxiliary variables of the quadratic `½xᵀPx + qᵀx + r`.
    pub fn quadratic(p: Matrix, q: Vector, r: f64) -> Self {
        Self { aux_dim: 0, p, q, r }
    }

    /// `scale·φ + shift`, for `scale ≥ 0`.
    pub fn scaled(&self, scale: f64, shift: f64) -> Self {
        Self {
            aux_dim: self.aux_dim,
            p: &self.p * scale,
            q: &self.q * scale,
            r: self.r * scale + shift,
        }
    }
}

/// A k-indexed family of DC pairs `fᵏ = gᵏ − hᵏ`.
pub trait AdcFamily: Send + Sync + fmt::Debug {
    fn name(&self) -> String;
    fn dim(&self) -> usize;
    fn eval(&self, k: usize, x: &Vector) -> Result<DcEval, AdcError>;
    /// Smoothness modulus of `gᵏ` or `hᵏ`.
    fn ell(&self, k: usize) -> f64;
    fn alpha_hat(&self, k: usize) -> f64;
    /// `Σ_{k' ≥ k} α̂^{k'}` in closed form.
    fn alpha_tail(&self, k: usize) -> f64;
    /// Whether `g` and `h` are differentiable everywhere.
    fn smooth_flags(&self) -> (bool, bool) {
        (true, true)
    }
    fn g_repr(&self, _k: usize) -> Option<QuadRepr> {
        None
    }
    fn h_repr(&self, _k: usize) -> Option<QuadRepr> {
        None
    }
    /// The limit function, when it can be evaluated.
    /// Smoothing parameter at level `k`, for families that have one.
    fn gamma(&self, _k: usize) -> Option<f64> {
        None
    }

    fn limit_value(&self, _x: &Vector) -> Result<Option<f64>, AdcError> {
        Ok(None)
    }
}

pub type SharedFamily = Arc<dyn AdcFamily>;

/// The DC pair of a family at a fixed level.
#[derive(Clone)]
pub struct DcPair<'a> {
    pub family: &'a dyn AdcFamily,
    pub k: usize,
}

impl<'a> DcPair<'a> {
    pub fn new(family: &'a dyn AdcFamily, k: usize) -> Self {
        Self { family, k }
    }

    pub fn f_value(&self, x: &Vector) -> Result<f64, AdcError> {
        Ok(self.family.eval(self.k, x)?.f)
    }

    pub fn g_value(&self, x: &Vector) -> Result<f64, AdcError> {
        Ok(self.family.eval(self.k, x)?.g)
    }

    pub fn g_subgrad(&self, x: &Vector) -> Result<Vector, AdcError> {
        Ok(self.family.eval(self.k, x)?.g_grad)
    }

    pub fn h_value(&self, x: &Vector) -> Result<f64, AdcError> {
        Ok(self.family.eval(self.k, x)?.h)
    }

    pub fn h_subgrad(&self, x: &Vector) -> Result<Vector, AdcError> {
        Ok(self.family.eval(self.k, x)?.h_grad)
    }
}

pub fn f_value(fam: &dyn AdcFamily, k: usize, x: &Vector) -> Result<f64, AdcError> {
    DcPair::new(fam, k).f_value(x)
}

/// Bounded per-point memo keyed by the exact bits of `(k, x)`.
#[derive(Default)]
pub struct OracleCache {
    map: Mutex<HashMap<(usize, Vec<u64>), DcEval>>,
}

const CACHE_CAPACITY: usize = 4096;

impl OracleCache {
    pub fn get_or_try<F>(&self, k: usize, x: &Vector, compute: F) -> Result<DcEval, AdcError>
    where
        F: FnOnce() -> Result<DcEval, AdcError>,
    {
        let key = (k, x.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        if let Some(hit) = self.map.lock().expect("cache poisoned").get(&key) {
            return Ok(hit.clone());
        }
        let value = compute()?;
        let mut map = self.map.lock().expect("cache poisoned");
        if map.len() >= CACHE_CAPACITY {
            map.clear();
        }
        map.insert(key, value.clone());
        Ok(value)
    }
}

impl fmt::Debug for OracleCache {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let len = self.map.lock().map(|m| m.len()).unwrap_or(0);
        write!(f, "OracleCache({len} entries)")
    }
}

/// `gᵏ(x) − hᵏ(y) − aᵀ(x − y) + tail`, with `a ∈ ∂hᵏ(y)`; convex in `x`.
#[derive(Debug, Clone)]
pub struct UpperModel {
    pub family: SharedFamily,
    pub k: usize,
    pub anchor: Vector,
    pub a: Vector,
    pub h_anchor: f64,
    pub tail: f64,
}

impl UpperModel {
    pub fn value(&self, x: &Vector) -> Result<f64, AdcError> {
        Ok(self.eval(x)?.0)
    }

    /// Value and gradient `∇gᵏ(x) − a`.
    pub fn eval(&self, x: &Vector) -> Result<(f64, Vector), AdcError> {
        let e = self.family.eval(self.k, x)?;
        let v = e.g - self.h_anchor - self.a.dot(&(x - &self.anchor)) + self.tail;
        Ok((v, e.g_grad - &self.a))
    }

    /// Constant and linear coefficient of the affine part: `value = g(x) + aff_c + aff_gᵀx`.
    pub fn affine_part(&self) -> (f64, Vector) {
        (
            -self.h_anchor + self.a.dot(&self.anchor) + self.tail,
            -&self.a,
        )
    }
}

/// `gᵏ(y) + bᵀ(x − y) − hᵏ(x)`, with `b ∈ ∂gᵏ(y)`; concave in `x`.
#[derive(Debug, Clone)]
pub struct LowerModel {
    pub family: SharedFamily,
    pub k: usize,
    pub anchor: Vector,
    pub b: Vector,
    pub g_anchor: f64,
}

impl LowerModel {
    pub fn value(&self, x: &Vector) -> Result<f64, AdcError> {
        Ok(self.eval(x)?.0)
    }

    /// Value and supergradient `b − ∇hᵏ(x)`.
    pub fn eval(&self, x: &Vector) -> Result<(f64, Vector), AdcError> {
        let e = self.family.eval(self.k, x)?;
        let v = self.g_anchor + self.b.dot(&(x - &self.anchor)) - e.h;
        Ok((v, &self.b - e.h_grad))
    }

    /// `value = aff_c + aff_gᵀx − h(x)`.
    pub fn affine_part(&self) -> (f64, Vector) {
        (self.g_anchor - self.b.dot(&self.anchor), self.b.clone())
    }
}

pub fn build_upper(fam: &SharedFamily, k: usize, y: &Vector) -> Result<UpperModel, AdcError> {
    build_upper_with_tail(fam, k, y, fam.alpha_tail(k))
}

/// Upper model with an explicit tail; objective terms use zero.
pub fn build_upper_with_tail(
    fam: &SharedFamily,
    k: usize,
    y: &Vector,
    tail: f64,
) -> Result<UpperModel, AdcError> {
    let e = fam.eval(k, y)?;
    Ok(UpperModel {
        family: fam.clone(),
        k,
        anchor: y.clone(),
        a: e.h_grad,
        h_anchor: e.h,
        tail,
    })
}

pub fn build_lower(fam: &SharedFamily, k: usize, y: &Vector) -> Result<LowerModel, AdcError> {
    let e = fam.eval(k, y)?;
    Ok(LowerModel {
        family: fam.clone(),
        k,
        anchor: y.clone(),
        b: e.g_grad,
        g_anchor: e.g,
    })
}

/// `φ↑(upper(x)) + φ↓(lower(x))`, a convex majorant of `φ(fᵏ(x))`.
#[derive(Debug, Clone)]
pub struct CompositeSurrogate {
    pub split: MonotoneSplit,
    pub upper: UpperModel,
    pub lower: LowerModel,
}

/// Value of the surrogate and of its two inner models at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateEval {
    pub value: f64,
    pub subgrad: Vector,
    pub upper: f64,
    pub lower: f64,
}

pub fn composite_surrogate(
    split: MonotoneSplit,
    upper: UpperModel,
    lower: LowerModel,
) -> CompositeSurrogate {
    CompositeSurrogate {
        split,
        upper,
        lower,
    }
}

/// Finite element of a subgradient interval closest to zero.
fn finite_element(lo: f64, hi: f64) -> f64 {
    0.0f64.clamp(lo, hi)
}

impl CompositeSurrogate {
    pub fn value(&self, x: &Vector) -> Result<f64, AdcError> {
        Ok(self.eval(x)?.value)
    }

    pub fn eval(&self, x: &Vector) -> Result<SurrogateEval, AdcError> {
        let (u, gu) = self.upper.eval(x)?;
        let (l, gl) = self.lower.eval(x)?;
        let up_val = self.split.up.value(u);
        let down_val = self.split.down.value(l);
        let iu = self.split.up.subgrad_interval(u)?;
        let il = self.split.down.subgrad_interval(l)?;
        let t1 = if iu.hi.is_finite() { iu.hi } else { finite_element(iu.lo, iu.hi) };
        let t2 = if il.lo.is_finite() { il.lo } else { finite_element(il.lo, il.hi) };
        let subgrad = gu * t1 + gl * t2;
        Ok(SurrogateEval {
            value: up_val + down_val,
            subgrad,
            upper: u,
            lower: l,
        })
    }
}

/// `scale·f + shift`. A negative scale swaps the roles of `g` and `h`.
#[derive(Debug, Clone)]
pub struct ScaledFamily {
    pub inner: SharedFamily,
    pub scale: f64,
    pub shift: f64,
    pub label: String,
}

impl ScaledFamily {
    pub fn new(inner: SharedFamily, scale: f64, shift: f64) -> Result<Self, AdcError> {
        if !scale.is_finite() || scale == 0.0 || !shift.is_finite() {
            return Err(AdcError::InvalidParameter(format!(
                "scale {scale} and shift {shift} must be finite with nonzero scale"
            )));
        }
        let label = format!("{}*({})+{}", scale, inner.name(), shift);
        Ok(Self {
            inner,
            scale,
            shift,
            label,
        })
    }
}

impl AdcFamily for ScaledFamily {
    fn name(&self) -> String {
        self.label.clone()
    }

    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn eval(&self, k: usize, x: &Vector) -> Result<DcEval, AdcError> {
        let e = self.inner.eval(k, x)?;
        let s = self.scale;
        let a = s.abs();
        Ok(if s > 0.0 {
            DcEval {
                f: s * e.f + self.shift,
                g: a * e.g + self.shift,
                g_grad: e.g_grad * a,
                h: a * e.h,
                h_grad: e.h_grad * a,
            }
        } else {
            DcEval {
                f: s * e.f + self.shift,
                g: a * e.h + self.shift,
                g_grad: e.h_grad * a,
                h: a * e.g,
                h_grad: e.g_grad * a,
            }
        })
    }

    fn ell(&self, k: usize) -> f64 {
        self.scale.abs() * self.inner.ell(k)
    }

    fn alpha_hat(&self, k: usize) -> f64 {
        self.scale.abs() * self.inner.alpha_hat(k)
    }

    fn alpha_tail(&self, k: usize) -> f64 {
        self.scale.abs() * self.inner.alpha_tail(k)
    }

    fn smooth_flags(&self) -> (bool, bool) {
        let (g, h) = self.inner.smooth_flags();
        if self.scale > 0.0 {
            (g, h)
        } else {
            (h, g)
        }
    }

    fn g_repr(&self, k: usize) -> Option<QuadRepr> {
        let src = if self.scale > 0.0 {
            self.inner.g_repr(k)
        } else {
            self.inner.h_repr(k)
        };
        src.map(|r| r.scaled(self.scale.abs(), self.shift))
    }

    fn h_repr(&self, k: usize) -> Option<QuadRepr> {
        let src = if self.scale > 0.0 {
            self.inner.h_repr(k)
        } else {
            self.inner.g_repr(k)
        };
        src.map(|r| r.scaled(self.scale.abs(), 0.0))
    }

    fn gamma(&self, k: usize) -> Option<f64> {
        self.inner.gamma(k)
    }

    fn limit_value(&self, x: &Vector) -> Result<Option<f64>, AdcError> {
        Ok(self
            .inner
            .limit_value(x)?
            .map(|v| self.scale * v + self.shift))
    }
}

/// A family frozen at level `k0`: the same DC pair for every `k`, with no tail.
#[derive(Debug, Clone)]
pub struct FixedLevelFamily {
    pub inner: SharedFamily,
    pub k0: usize,
}

impl AdcFamily for FixedLevelFamily {
    fn name(&self) -> String {
        format!("{}@{}", self.inner.name(), self.k0)
    }

    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn eval(&self, _k: usize, x: &Vector) -> Result<DcEval, AdcError> {
        self.inner.eval(self.k0, x)
    }

    fn ell(&self, _k: usize) -> f64 {
        self.inner.ell(self.k0)
    }

    fn alpha_hat(&self, _k: usize) -> f64 {
        0.0
    }

    fn alpha_tail(&self, _k: usize) -> f64 {
        0.0
    }

    fn smooth_flags(&self) -> (bool, bool) {
        self.inner.smooth_flags()
    }

    fn g_repr(&self, _k: usize) -> Option<QuadRepr> {
        self.inner.g_repr(self.k0)
    }

    fn h_repr(&self, _k: usize) -> Option<QuadRepr> {
        self.inner.h_repr(self.k0)
    }

    fn gamma(&self, _k: usize) -> Option<f64> {
        self.inner.gamma(self.k0)
    }

    fn limit_value(&self, x: &Vector) -> Result<Option<f64>, AdcError> {
        Ok(Some(self.inner.eval(self.k0, x)?.f))
    }
}

/// `gᵏ = ½ c_g‖x‖²`, `hᵏ = ½ c_h‖x‖²` with constant schedules; a reference family for tests.
#[derive(Debug, Clone)]
pub struct QuadraticFamily {
    pub n: usize,
    pub c_g: f64,
    pub c_h: f64,
}

impl AdcFamily for QuadraticFamily {
    fn name(&self) -> String {
        format!("quadratic(c_g={}, c_h={})", self.c_g, self.c_h)
    }

    fn dim(&self) -> usize {
        self.n
    }

    fn eval(&self, _k: usize, x: &Vector) -> Result<DcEval, AdcError> {
        if x.len() != self.n {
            return Err(AdcError::DimensionMismatch(format!(
                "point has length {}, expected {}",
                x.len(),
                self.n
            )));
        }
        let sq = x.norm_squared();
        let g = 0.5 * self.c_g * sq;
        let h = 0.5 * self.c_h * sq;
        Ok(DcEval {
            f: g - h,
            g,
            g_grad: x * self.c_g,
            h,
            h_grad: x * self.c_h,
        })
    }

    fn ell(&self, _k: usize) -> f64 {
        self.c_g.max(self.c_h)
    }

    fn alpha_hat(&self, _k: usize) -> f64 {
        0.0
    }

    fn alpha_tail(&self, _k: usize) -> f64 {
        0.0
    }

    fn g_repr(&self, _k: usize) -> Option<QuadRepr> {
        Some(QuadRepr::quadratic(
            Matrix::identity(self.n, self.n) * self.c_g,
            Vector::zeros(self.n),
            0.0,
        ))
    }

    fn h_repr(&self, _k: usize) -> Option<QuadRepr> {
        Some(QuadRepr::quadratic(
            Matrix::identity(self.n, self.n) * self.c_h,
            Vector::zeros(self.n),
            0.0,
        ))
    }

    fn limit_value(&self, x: &Vector) -> Result<Option<f64>, AdcError> {
        Ok(Some(0.5 * (self.c_g - self.c_h) * x.norm_squared()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::convex1d::UnivariateConvex;

    fn quad(c_g: f64, c_h: f64) -> SharedFamily {
        Arc::new(QuadraticFamily { n: 2, c_g, c_h })
    }

    #[test]
    fn pure_quadratic_value() {
        let fam = quad(2.0, 0.0);
        let x = Vector::from_vec(vec![1.0, 2.0]);
        assert_eq!(f_value(fam.as_ref(), 3, &x).unwrap(), 5.0);
    }

    #[test]
    fn anchoring_identities() {
        let fam = quad(3.0, 1.0);
        let y = Vector::from_vec(vec![0.3, -0.7]);
        let up = build_upper_with_tail(&fam, 0, &y, 0.25).unwrap();
        let low = build_lower(&fam, 0, &y).unwrap();
        let f = f_value(fam.as_ref(), 0, &y).unwrap();
        assert!((up.value(&y).unwrap() - (f + 0.25)).abs() < 1e-15);
        assert!((low.value(&y).unwrap() - f).abs() < 1e-15);
    }

    #[test]
    fn surrogate_of_abs_dev_at_anchor() {
        let fam = quad(3.0, 1.0);
        let y = Vector::from_vec(vec![0.5, 0.5]);
        let nu = 1.0;
        let split = UnivariateConvex::abs_dev(nu).monotone_split().unwrap();
        let up = build_upper_with_tail(&fam, 0, &y, 0.1).unwrap();
        let low = build_lower(&fam, 0, &y).unwrap();
        let s = composite_surrogate(split, up, low);
        let f = f_value(fam.as_ref(), 0, &y).unwrap();
        let expect = (f + 0.1 - nu).max(0.0) + (nu - f).max(0.0);
        assert!((s.value(&y).unwrap() - expect).abs() < 1e-15);
    }

    #[test]
    fn negative_scale_swaps_parts() {
        let fam = quad(3.0, 1.0);
        let neg: SharedFamily = Arc::new(ScaledFamily::new(fam.clone(), -2.0, 0.5).unwrap());
        let x = Vector::from_vec(vec![1.0, -1.0]);
        let base = fam.eval(0, &x).unwrap();
        let e = neg.eval(0, &x).unwrap();
        assert!((e.f - (-2.0 * base.f + 0.5)).abs() < 1e-14);
        assert!((e.g - e.h - e.f).abs() < 1e-14);
        assert_eq!(e.g_grad, base.h_grad * 2.0);
        let (gr, hr) = (neg.g_repr(0).unwrap(), neg.h_repr(0).unwrap());
        let u = Vector::zeros(0);
        assert!((gr.value(&x, &u) - e.g).abs() < 1e-14);
        assert!((hr.value(&x, &u) - e.h).abs() < 1e-14);
    }

    #[test]
    fn cache_returns_identical_result() {
        let cache = OracleCache::default();
        let x = Vector::from_vec(vec![0.1]);
        let mut calls = 0;
        for _ in 0..3 {
            let e = cache
                .get_or_try(1, &x, || {
                    calls += 1;
                    QuadraticFamily { n: 1, c_g: 1.0, c_h: 0.0 }.eval(1, &x)
                })
                .unwrap();
            assert!((e.f - 0.005).abs() < 1e-15);
        }
        assert_eq!(calls, 1);
    }
}
