//! Univariate proper lsc convex functions and their monotone decomposition.
//!
//! Every supported kind is a maximum of finitely many affine pieces restricted
//! to an interval, which keeps values, subgradient intervals and the split
//! `φ = φ↑ + φ↓` exact.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Convex1dError {
    #[error("point {t} is outside the domain [{lo}, {hi}]")]
    OutOfDomain { t: f64, lo: f64, hi: f64 },
    #[error("unsupported function: {0}")]
    Unsupported(String),
}

/// Closed interval with possibly infinite endpoints.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    #[serde(with = "ext_real::lo")]
    pub lo: f64,
    #[serde(with = "ext_real::hi")]
    pub hi: f64,
}

impl Interval {
    pub const REAL_LINE: Interval = Interval {
        lo: f64::NEG_INFINITY,
        hi: f64::INFINITY,
    };

    pub fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub fn point(t: f64) -> Self {
        Self { lo: t, hi: t }
    }

    pub fn contains(&self, t: f64) -> bool {
        self.lo <= t && t <= self.hi
    }

    pub fn intersect(&self, other: &Interval) -> Interval {
        Interval::new(self.lo.max(other.lo), self.hi.min(other.hi))
    }

    pub fn minkowski_sum(&self, other: &Interval) -> Interval {
        Interval::new(self.lo + other.lo, self.hi + other.hi)
    }

    /// Closest point of the interval to `t`.
    pub fn clamp(&self, t: f64) -> f64 {
        t.max(self.lo).min(self.hi)
    }

    pub fn approx_eq(&self, other: &Interval, tol: f64) -> bool {
        let close = |a: f64, b: f64| {
            if a.is_infinite() || b.is_infinite() {
                a == b
            } else {
                (a - b).abs() <= tol
            }
        };
        close(self.lo, other.lo) && close(self.hi, other.hi)
    }
}

/// JSON has no infinities; unbounded endpoints are written as `null`.
mod ext_real {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_some(v)
        } else {
            s.serialize_none()
        }
    }

    pub mod lo {
        use super::*;
        pub use super::serialize;
        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
            Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NEG_INFINITY))
        }
    }

    pub mod hi {
        use super::*;
        pub use super::serialize;
        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
            Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Kind {
    /// `slope·t + intercept`
    Affine { slope: f64, intercept: f64 },
    /// `|ν − t|`
    AbsDev { nu: f64 },
    /// `max(0, t − ν)`
    HingeUp { nu: f64 },
    /// `max(0, ν − t)`
    HingeDown { nu: f64 },
    /// `max(0, |ν − t| − s)`
    DeadZone { nu: f64, s: f64 },
    /// `δ_(−∞, r]`
    IndicatorLeq { r: f64 },
    /// `max_j (slope_j·t + intercept_j)`
    MaxAffine { pieces: Vec<(f64, f64)> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnivariateConvex {
    #[serde(flatten)]
    pub kind: Kind,
    #[serde(default = "real_line")]
    pub domain: Interval,
}

fn real_line() -> Interval {
    Interval::REAL_LINE
}

impl UnivariateConvex {
    pub fn new(kind: Kind) -> Self {
        Self {
            kind,
            domain: Interval::REAL_LINE,
        }
    }

    pub fn with_domain(mut self, domain: Interval) -> Self {
        self.domain = domain;
        self
    }

    pub fn affine(slope: f64, intercept: f64) -> Self {
        Self::new(Kind::Affine { slope, intercept })
    }

    pub fn zero() -> Self {
        Self::affine(0.0, 0.0)
    }

    pub fn abs_dev(nu: f64) -> Self {
        Self::new(Kind::AbsDev { nu })
    }

    pub fn hinge_up(nu: f64) -> Self {
        Self::new(Kind::HingeUp { nu })
    }

    pub fn hinge_down(nu: f64) -> Self {
        Self::new(Kind::HingeDown { nu })
    }

    pub fn dead_zone(nu: f64, s: f64) -> Result<Self, Convex1dError> {
        if !(s >= 0.0) {
            return Err(Convex1dError::Unsupported(format!(
                "dead zone half-width must be nonnegative, got {s}"
            )));
        }
        Ok(Self::new(Kind::DeadZone { nu, s }))
    }

    pub fn indicator_leq(r: f64) -> Self {
        Self::new(Kind::IndicatorLeq { r })
    }

    pub fn max_affine(pieces: Vec<(f64, f64)>) -> Result<Self, Convex1dError> {
        if pieces.is_empty() {
            return Err(Convex1dError::Unsupported("max-affine needs at least one piece".into()));
        }
        Ok(Self::new(Kind::MaxAffine { pieces }))
    }

    /// Domain including the implicit restriction of an indicator.
    pub fn effective_domain(&self) -> Interval {
        match self.kind {
            Kind::IndicatorLeq { r } => self.domain.intersect(&Interval::new(f64::NEG_INFINITY, r)),
            _ => self.domain,
        }
    }

    /// Affine pieces whose maximum gives the function on its effective domain.
    pub fn pieces(&self) -> Vec<(f64, f64)> {
        match &self.kind {
            Kind::Affine { slope, intercept } => vec![(*slope, *intercept)],
            Kind::AbsDev { nu } => vec![(-1.0, *nu), (1.0, -*nu)],
            Kind::HingeUp { nu } => vec![(0.0, 0.0), (1.0, -*nu)],
            Kind::HingeDown { nu } => vec![(-1.0, *nu), (0.0, 0.0)],
            Kind::DeadZone { nu, s } => vec![(-1.0, *nu - *s), (0.0, 0.0), (1.0, -(*nu + *s))],
            Kind::IndicatorLeq { .. } => vec![(0.0, 0.0)],
            Kind::MaxAffine { pieces } => pieces.clone(),
        }
    }

    fn raw_value(&self, t: f64) -> f64 {
        match self.kind {
            Kind::Affine { slope, intercept } => slope * t + intercept,
            Kind::AbsDev { nu } => (nu - t).abs(),
            Kind::HingeUp { nu } => (t - nu).max(0.0),
            Kind::HingeDown { nu } => (nu - t).max(0.0),
            Kind::DeadZone { nu, s } => ((nu - t).abs() - s).max(0.0),
            Kind::IndicatorLeq { .. } => 0.0,
            Kind::MaxAffine { ref pieces } => pieces
                .iter()
                .map(|&(a, b)| a * t + b)
                .fold(f64::NEG_INFINITY, f64::max),
        }
    }

    /// Extended value: `+∞` outside the domain.
    pub fn value(&self, t: f64) -> f64 {
        if self.effective_domain().contains(t) {
            self.raw_value(t)
        } else {
            f64::INFINITY
        }
    }

    pub fn is_zero(&self) -> bool {
        self.domain == Interval::REAL_LINE
            && self.pieces().iter().all(|&(a, b)| a == 0.0 && b == 0.0)
    }

    /// Whether this is nondecreasing as an extended-real function on ℝ.
    pub fn is_nondecreasing(&self) -> bool {
        let dom = self.effective_domain();
        dom.lo == f64::NEG_INFINITY && self.pieces().iter().all(|&(a, _)| a >= 0.0)
    }

    pub fn is_nonincreasing(&self) -> bool {
        let dom = self.effective_domain();
        dom.hi == f64::INFINITY && self.pieces().iter().all(|&(a, _)| a <= 0.0)
    }

    /// The full subdifferential at `t` as a closed interval.
    pub fn subgrad_interval(&self, t: f64) -> Result<Interval, Convex1dError> {
        let dom = self.effective_domain();
        if !dom.contains(t) || !t.is_finite() {
            return Err(Convex1dError::OutOfDomain {
                t,
                lo: dom.lo,
                hi: dom.hi,
            });
        }
        let (mut lo, mut hi) = match self.kind {
            Kind::Affine { slope, .. } => (slope, slope),
            Kind::AbsDev { nu } => kink(t, nu, -1.0, 1.0),
            Kind::HingeUp { nu } => kink(t, nu, 0.0, 1.0),
            Kind::HingeDown { nu } => kink(t, nu, -1.0, 0.0),
            Kind::DeadZone { nu, s } => {
                let left = nu - s;
                let right = nu + s;
                if s == 0.0 {
                    kink(t, nu, -1.0, 1.0)
                } else if t < left {
                    (-1.0, -1.0)
                } else if t == left {
                    (-1.0, 0.0)
                } else if t < right {
                    (0.0, 0.0)
                } else if t == right {
                    (0.0, 1.0)
                } else {
                    (1.0, 1.0)
                }
            }
            Kind::IndicatorLeq { .. } => (0.0, 0.0),
            Kind::MaxAffine { ref pieces } => {
                let vals: Vec<f64> = pieces.iter().map(|&(a, b)| a * t + b).collect();
                let top = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let tol = 1e-12 * (1.0 + top.abs());
                let mut lo = f64::INFINITY;
                let mut hi = f64::NEG_INFINITY;
                for (&(a, _), &v) in pieces.iter().zip(&vals) {
                    if v >= top - tol {
                        lo = lo.min(a);
                        hi = hi.max(a);
                    }
                }
                (lo, hi)
            }
        };
        // Normal cone of the domain at its endpoints.
        if t == dom.hi {
            hi = f64::INFINITY;
        }
        if t == dom.lo {
            lo = f64::NEG_INFINITY;
        }
        Ok(Interval::new(lo, hi))
    }

    /// Leftmost minimizer over the effective domain, when one exists.
    pub fn leftmost_minimizer(&self) -> Option<f64> {
        let dom = self.effective_domain();
        let pieces = self.pieces();
        let smin = pieces.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
        let smax = pieces.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
        if dom.lo == f64::NEG_INFINITY && smin >= 0.0 && smax > 0.0 {
            return None;
        }
        if dom.hi == f64::INFINITY && smax <= 0.0 && smin < 0.0 {
            return None;
        }
        if dom.lo == f64::NEG_INFINITY && smin == 0.0 && smax == 0.0 {
            return None;
        }
        let mut candidates = Vec::new();
        if dom.lo.is_finite() {
            candidates.push(dom.lo);
        }
        if dom.hi.is_finite() {
            candidates.push(dom.hi);
        }
        for (i, &(a1, b1)) in pieces.iter().enumerate() {
            for &(a2, b2) in &pieces[i + 1..] {
                if a1 != a2 {
                    let t = (b2 - b1) / (a1 - a2);
                    if dom.contains(t) {
                        candidates.push(t);
                    }
                }
            }
        }
        let best = candidates
            .iter()
            .map(|&t| self.raw_value(t))
            .fold(f64::INFINITY, f64::min);
        let tol = 1e-12 * (1.0 + best.abs());
        candidates
            .into_iter()
            .filter(|&t| self.raw_value(t) <= best + tol)
            .fold(None, |acc: Option<f64>, t| Some(acc.map_or(t, |a| a.min(t))))
    }

    /// Monotone decomposition `φ = φ↑ + φ↓`.
    pub fn monotone_split(&self) -> Result<MonotoneSplit, Convex1dError> {
        if self.domain == Interval::REAL_LINE {
            let closed = match self.kind {
                Kind::AbsDev { nu } => Some((Self::hinge_up(nu), Self::hinge_down(nu), Some(nu))),
                Kind::DeadZone { nu, s } => Some((
                    Self::hinge_up(nu + s),
                    Self::hinge_down(nu - s),
                    Some(nu - s),
                )),
                Kind::HingeUp { .. } | Kind::IndicatorLeq { .. } => {
                    Some((self.clone(), Self::zero(), None))
                }
                Kind::HingeDown { .. } => Some((Self::zero(), self.clone(), None)),
                Kind::Affine { slope, .. } => Some(if slope >= 0.0 {
                    (self.clone(), Self::zero(), None)
                } else {
                    (Self::zero(), self.clone(), None)
                }),
                Kind::MaxAffine { .. } => None,
            };
            if let Some((up, down, split_point)) = closed {
                return Ok(MonotoneSplit {
                    up,
                    down,
                    split_point,
                });
            }
        }
        if self.is_nondecreasing() {
            return Ok(MonotoneSplit {
                up: self.clone(),
                down: Self::zero(),
                split_point: None,
            });
        }
        if self.is_nonincreasing() {
            return Ok(MonotoneSplit {
                up: Self::zero(),
                down: self.clone(),
                split_point: None,
            });
        }
        let z = self.leftmost_minimizer().ok_or_else(|| {
            Convex1dError::Unsupported("no recession direction and no attained minimum".into())
        })?;
        let dom = self.effective_domain();
        let fz = self.raw_value(z);
        let pieces = self.pieces();
        let mut up_pieces: Vec<(f64, f64)> =
            pieces.iter().filter(|p| p.0 > 0.0).cloned().collect();
        up_pieces.push((0.0, fz));
        let mut down_pieces: Vec<(f64, f64)> = pieces
            .iter()
            .filter(|p| p.0 < 0.0)
            .map(|&(a, b)| (a, b - fz))
            .collect();
        down_pieces.push((0.0, 0.0));
        Ok(MonotoneSplit {
            up: Self::new(Kind::MaxAffine { pieces: up_pieces })
                .with_domain(Interval::new(f64::NEG_INFINITY, dom.hi)),
            down: Self::new(Kind::MaxAffine {
                pieces: down_pieces,
            })
            .with_domain(Interval::new(dom.lo, f64::INFINITY)),
            split_point: Some(z),
        })
    }

    /// `∂φ(t) = ∂φ↑(t) + ∂φ↓(t)` within 1e−12.
    pub fn subgrad_additivity_check(&self, t: f64) -> Result<bool, Convex1dError> {
        let whole = self.subgrad_interval(t)?;
        let split = self.monotone_split()?;
        let sum = split
            .up
            .subgrad_interval(t)?
            .minkowski_sum(&split.down.subgrad_interval(t)?);
        Ok(whole.approx_eq(&sum, 1e-12))
    }
}

fn kink(t: f64, at: f64, left: f64, right: f64) -> (f64, f64) {
    if t < at {
        (left, left)
    } else if t > at {
        (right, right)
    } else {
        (left, right)
    }
}

/// The pair `(φ↑, φ↓)`; `split_point` is the minimizer used when φ is not monotone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonotoneSplit {
    pub up: UnivariateConvex,
    pub down: UnivariateConvex,
    pub split_point: Option<f64>,
}

impl MonotoneSplit {
    pub fn value(&self, t: f64) -> f64 {
        self.up.value(t) + self.down.value(t)
    }

    /// True iff φ↓ is nontrivial, i.e. the index belongs to the non-monotone group.
    pub fn has_down(&self) -> bool {
        !self.down.is_zero()
    }
}
