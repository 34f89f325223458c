//! The strongly convex subproblem of one inner iteration:
//!
//! `min_x Σ_p φ↑_p(upper_p(x)) + φ↓_p(lower_p(x)) + λ/2‖x − y‖²`
//! subject to `upper_q(x) ≤ 0` for the constraint models and `x` in a box.
//!
//! Solved as an epigraph master QCQP. Every convex function met inside the
//! models (`g` for upper models, `h` for lower models) gets an epigraph
//! variable `w`, tied to the function either through its exact quadratic
//! representation or through cutting planes refined until the master bound
//! meets the true value.

use thiserror::Error;

use crate::adc::{AdcError, LowerModel, QuadRepr, SharedFamily, UpperModel};
use crate::convex1d::{Interval, MonotoneSplit, UnivariateConvex};
use crate::qp::{self, LinearRow, Matrix, QpError, QpProblem, QpSettings, QpStatus, QuadConstraint, Vector};

/// Reported stationarity constant: the residual is expected below `KAPPA · tol_sub`.
pub const KAPPA: f64 = 10.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SubproblemError {
    #[error("master problem infeasible: {0}")]
    MasterInfeasible(String),
    #[error("no progress after {rounds} rounds (gap {gap:.3e}, violation {violation:.3e})")]
    StallNoProgress { rounds: usize, gap: f64, violation: f64 },
    #[error("center violates constraint {index}: value {value:.3e}")]
    CenterInfeasible { index: usize, value: f64 },
    #[error("invalid subproblem: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Oracle(#[from] AdcError),
    #[error(transparent)]
    Qp(#[from] QpError),
}

#[derive(Debug, Clone)]
pub struct ObjectiveTerm {
    pub split: MonotoneSplit,
    pub upper: UpperModel,
    pub lower: LowerModel,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubproblemSettings {
    pub max_cuts_per_piece: usize,
    pub max_rounds: usize,
    /// Rounds without a better gap before giving up.
    pub patience: usize,
    pub master_tol: f64,
    /// Largest constraint value tolerated at the center.
    pub center_tolerance: f64,
}

impl Default for SubproblemSettings {
    fn default() -> Self {
        Self {
            max_cuts_per_piece: 200,
            max_rounds: 500,
            patience: 60,
            master_tol: 1e-10,
            center_tolerance: 1e-6,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SubproblemSpec {
    pub objectives: Vec<ObjectiveTerm>,
    pub constraints: Vec<UpperModel>,
    pub lower: Vector,
    pub upper: Vector,
    pub center: Vector,
    pub lambda: f64,
    pub tol_sub: f64,
    pub tol_feas: f64,
    pub settings: SubproblemSettings,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubproblemResult {
    pub x_plus: Vector,
    pub y1: Vec<f64>,
    pub y2: Vec<f64>,
    pub constraint_duals: Vec<f64>,
    pub gap: f64,
    pub feas_violation: f64,
    /// `Σ_p φ↑(upper) + φ↓(lower)` at `x_plus`, without the prox term.
    pub surrogate: f64,
    /// Master lower bound including the prox term.
    pub master_value: f64,
    pub stationarity: f64,
    pub rounds: usize,
}

impl SubproblemResult {
    /// Euclidean norm of all multipliers `(y1, y2, constraint duals)`.
    pub fn multiplier_norm(&self) -> f64 {
        self.y1
            .iter()
            .chain(&self.y2)
            .chain(&self.constraint_duals)
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Part {
    G,
    H,
}

#[derive(Debug, Clone)]
struct Cut {
    point: Vector,
    value: f64,
    grad: Vector,
    dual: f64,
    row: usize,
}

#[derive(Debug, Clone)]
enum Source {
    Repr { repr: QuadRepr, u_off: usize },
    Cuts(Vec<Cut>),
}

#[derive(Debug, Clone)]
struct Slot {
    family: SharedFamily,
    k: usize,
    part: Part,
    w: usize,
    source: Source,
}

impl Slot {
    fn eval(&self, x: &Vector) -> Result<(f64, Vector), AdcError> {
        let e = self.family.eval(self.k, x)?;
        Ok(match self.part {
            Part::G => (e.g, e.g_grad),
            Part::H => (e.h, e.h_grad),
        })
    }
}

/// One monotone part `τ ≥ pieces(w-based argument)` of an objective term.
#[derive(Debug, Clone)]
struct PiecePart {
    slot: usize,
    tau: usize,
    pieces: Vec<(f64, f64)>,
    /// Argument is `sign·w + c + aᵀx` with sign +1 for upper models, −1 for lower.
    c: f64,
    a: Vector,
    sign: f64,
    bound: Interval,
    rows: Vec<usize>,
}

#[derive(Debug, Clone)]
struct ConstraintPart {
    slot: usize,
    c: f64,
    a: Vector,
    row: usize,
}

struct Master {
    n: usize,
    nvar: usize,
    slots: Vec<Slot>,
    up: Vec<Option<PiecePart>>,
    down: Vec<Option<PiecePart>>,
    cons: Vec<ConstraintPart>,
}

fn new_slot(
    family: &SharedFamily,
    k: usize,
    part: Part,
    nvar: &mut usize,
    use_cuts: bool,
) -> Slot {
    let repr = if use_cuts {
        None
    } else {
        match part {
            Part::G => family.g_repr(k),
            Part::H => family.h_repr(k),
        }
    };
    let w = *nvar;
    *nvar += 1;
    let source = match repr {
        Some(repr) => {
            let u_off = *nvar;
            *nvar += repr.aux_dim;
            Source::Repr { repr, u_off }
        }
        None => Source::Cuts(Vec::new()),
    };
    Slot {
        family: family.clone(),
        k,
        part,
        w,
        source,
    }
}

fn real_part(f: &UnivariateConvex) -> Option<(Vec<(f64, f64)>, Interval)> {
    if f.is_zero() {
        None
    } else {
        Some((f.pieces(), f.effective_domain()))
    }
}

impl Master {
    fn layout(spec: &SubproblemSpec, force_cuts: bool) -> Master {
        let n = spec.center.len();
        let mut nvar = n;
        let mut slots = Vec::new();
        let mut up = Vec::new();
        let mut down = Vec::new();
        for term in &spec.objectives {
            up.push(real_part(&term.split.up).map(|(pieces, bound)| {
                slots.push(new_slot(&term.upper.family, term.upper.k, Part::G, &mut nvar, force_cuts));
                let tau = nvar;
                nvar += 1;
                let (c, a) = term.upper.affine_part();
                PiecePart {
                    slot: slots.len() - 1,
                    tau,
                    pieces,
                    c,
                    a,
                    sign: 1.0,
                    bound,
                    rows: Vec::new(),
                }
            }));
            down.push(real_part(&term.split.down).map(|(pieces, bound)| {
                slots.push(new_slot(&term.lower.family, term.lower.k, Part::H, &mut nvar, force_cuts));
                let tau = nvar;
                nvar += 1;
                let (c, a) = term.lower.affine_part();
                PiecePart {
                    slot: slots.len() - 1,
                    tau,
                    pieces,
                    c,
                    a,
                    sign: -1.0,
                    bound,
                    rows: Vec::new(),
                }
            }));
        }
        let mut cons = Vec::new();
        for model in &spec.constraints {
            slots.push(new_slot(&model.family, model.k, Part::G, &mut nvar, force_cuts));
            let (c, a) = model.affine_part();
            cons.push(ConstraintPart {
                slot: slots.len() - 1,
                c,
                a,
                row: 0,
            });
        }
        Master {
            n,
            nvar,
            slots,
            up,
            down,
            cons,
        }
    }

    fn add_cut(&mut self, slot: usize, x: &Vector) -> Result<(), AdcError> {
        let (value, grad) = self.slots[slot].eval(x)?;
        if let Source::Cuts(cuts) = &mut self.slots[slot].source {
            cuts.push(Cut {
                point: x.clone(),
                value,
                grad,
                dual: f64::INFINITY,
                row: 0,
            });
        }
        Ok(())
    }

    fn evict(&mut self, cap: usize) {
        for slot in &mut self.slots {
            if let Source::Cuts(cuts) = &mut slot.source {
                while cuts.len() > cap {
                    // Lowest dual activity goes first; the oldest wins ties.
                    let idx = cuts
                        .iter()
                        .enumerate()
                        .min_by(|a, b| a.1.dual.partial_cmp(&b.1.dual).unwrap_or(std::cmp::Ordering::Equal))
                        .map(|(i, _)| i)
                        .unwrap_or(0);
                    cuts.remove(idx);
                }
            }
        }
    }

    fn build(&mut self, spec: &SubproblemSpec) -> QpProblem {
        let (n, nv) = (self.n, self.nvar);
        let mut p = Matrix::zeros(nv, nv);
        let mut q = Vector::zeros(nv);
        for i in 0..n {
            p[(i, i)] = spec.lambda;
            q[i] = -spec.lambda * spec.center[i];
        }
        let mut rows: Vec<LinearRow> = Vec::new();
        let mut quads = Vec::new();
        let push = |g: Vector, h: f64, rows: &mut Vec<LinearRow>| -> usize {
            rows.push(LinearRow::new(g, h));
            rows.len() - 1
        };

        for part in self.up.iter_mut().chain(self.down.iter_mut()).flatten() {
            q[part.tau] = 1.0;
            let w = self.slots[part.slot].w;
            part.rows.clear();
            for &(s, c0) in &part.pieces {
                // s·(sign·w + c + aᵀx) + c0 ≤ τ
                let mut g = Vector::zeros(nv);
                for i in 0..n {
                    g[i] = s * part.a[i];
                }
                g[w] = s * part.sign;
                g[part.tau] = -1.0;
                part.rows.push(push(g, -s * part.c - c0, &mut rows));
            }
            // Domain of the outer part: upper ≤ hi, lower ≥ lo.
            let limit = if part.sign > 0.0 { part.bound.hi } else { -part.bound.lo };
            if limit.is_finite() {
                let mut g = Vector::zeros(nv);
                for i in 0..n {
                    g[i] = part.sign * part.a[i];
                }
                g[w] = 1.0;
                push(g, limit - part.sign * part.c, &mut rows);
            }
        }
        for con in &mut self.cons {
            let mut g = Vector::zeros(nv);
            g.rows_mut(0, n).copy_from(&con.a);
            g[self.slots[con.slot].w] = 1.0;
            con.row = push(g, -con.c, &mut rows);
        }
        for slot in &mut self.slots {
            match &mut slot.source {
                Source::Repr { repr, u_off } => {
                    let aux = repr.aux_dim;
                    let idx: Vec<usize> = (0..n).chain(*u_off..*u_off + aux).collect();
                    let mut pq = Matrix::zeros(nv, nv);
                    let mut qq = Vector::zeros(nv);
                    for (a, &ia) in idx.iter().enumerate() {
                        qq[ia] = repr.q[a];
                        for (b, &ib) in idx.iter().enumerate() {
                            pq[(ia, ib)] = repr.p[(a, b)];
                        }
                    }
                    qq[slot.w] = -1.0;
                    quads.push(QuadConstraint { p: pq, q: qq, r: repr.r });
                    for j in 0..aux {
                        let mut g = Vector::zeros(nv);
                        g[*u_off + j] = -1.0;
                        push(g, 0.0, &mut rows);
                    }
                }
                Source::Cuts(cuts) => {
                    for cut in cuts.iter_mut() {
                        // value + gradᵀ(x − point) ≤ w
                        let mut g = Vector::zeros(nv);
                        g.rows_mut(0, n).copy_from(&cut.grad);
                        g[slot.w] = -1.0;
                        cut.row = push(g, cut.grad.dot(&cut.point) - cut.value, &mut rows);
                    }
                }
            }
        }
        let mut prob = QpProblem::new(p, q);
        prob.lin_ineq = rows;
        qp::push_box_rows(&mut prob.lin_ineq, &pad(&spec.lower, nv, f64::NEG_INFINITY), &pad(&spec.upper, nv, f64::INFINITY))
            .expect("validated box");
        prob.quad_ineq = quads;
        prob
    }
}

fn pad(v: &Vector, len: usize, fill: f64) -> Vector {
    Vector::from_fn(len, |i, _| if i < v.len() { v[i] } else { fill })
}

/// True surrogate pieces at one point.
struct PointEval {
    surrogate: f64,
    violation: f64,
    upper_vals: Vec<f64>,
    lower_vals: Vec<f64>,
    con_vals: Vec<f64>,
}

fn evaluate(spec: &SubproblemSpec, x: &Vector) -> Result<PointEval, AdcError> {
    let mut surrogate = 0.0;
    let mut violation: f64 = 0.0;
    let mut upper_vals = Vec::with_capacity(spec.objectives.len());
    let mut lower_vals = Vec::with_capacity(spec.objectives.len());
    for term in &spec.objectives {
        let u = if term.split.up.is_zero() { 0.0 } else { term.upper.value(x)? };
        let l = if term.split.down.is_zero() { 0.0 } else { term.lower.value(x)? };
        let du = term.split.up.effective_domain();
        let dl = term.split.down.effective_domain();
        violation = violation.max(u - du.hi).max(dl.lo - l);
        surrogate += term.split.up.pieces().iter().map(|&(s, c)| s * u + c).fold(f64::NEG_INFINITY, f64::max);
        if !term.split.down.is_zero() {
            surrogate += term.split.down.pieces().iter().map(|&(s, c)| s * l + c).fold(f64::NEG_INFINITY, f64::max);
        }
        upper_vals.push(u);
        lower_vals.push(l);
    }
    let mut con_vals = Vec::with_capacity(spec.constraints.len());
    for model in &spec.constraints {
        let v = model.value(x)?;
        violation = violation.max(v);
        con_vals.push(v);
    }
    Ok(PointEval {
        surrogate,
        violation: violation.max(0.0),
        upper_vals,
        lower_vals,
        con_vals,
    })
}

fn validate(spec: &SubproblemSpec) -> Result<(), SubproblemError> {
    let n = spec.center.len();
    if spec.lower.len() != n || spec.upper.len() != n {
        return Err(SubproblemError::InvalidSpec("box and center dimensions differ".into()));
    }
    if (0..n).any(|i| spec.lower[i] > spec.upper[i]) {
        return Err(SubproblemError::InvalidSpec("empty box".into()));
    }
    if !(spec.lambda > 0.0 && spec.tol_sub > 0.0 && spec.tol_feas > 0.0) {
        return Err(SubproblemError::InvalidSpec(
            "lambda, tol_sub and tol_feas must be positive".into(),
        ));
    }
    for term in &spec.objectives {
        if term.upper.anchor.len() != n || term.lower.anchor.len() != n {
            return Err(SubproblemError::InvalidSpec("model anchor dimension differs".into()));
        }
    }
    Ok(())
}

/// Hull of the subgradients of `f` over `[t − r, t + r] ∩ dom f`.
fn subgrad_hull(f: &UnivariateConvex, t: f64, r: f64) -> Result<Interval, AdcError> {
    let dom = f.effective_domain();
    let lo_pt = dom.clamp(t - r);
    let hi_pt = dom.clamp(t + r);
    let lo = f.subgrad_interval(lo_pt)?.lo;
    let hi = f.subgrad_interval(hi_pt)?.hi;
    Ok(Interval::new(lo, hi))
}

/// Distance of `−G` to the normal cone of the box at `x`.
fn box_residual(g: &Vector, x: &Vector, lower: &Vector, upper: &Vector) -> f64 {
    let mut sq = 0.0;
    for i in 0..g.len() {
        let at_hi = upper[i] - x[i] <= 1e-9;
        let at_lo = x[i] - lower[i] <= 1e-9;
        let r = if at_hi && at_lo {
            0.0
        } else if at_hi {
            g[i].max(0.0)
        } else if at_lo {
            (-g[i]).max(0.0)
        } else {
            g[i].abs()
        };
        sq += r * r;
    }
    sq.sqrt()
}

/// Multipliers with their admissible intervals and stationarity directions.
struct MultiplierSystem {
    values: Vec<f64>,
    bounds: Vec<Interval>,
    dirs: Vec<Vector>,
    base: Vector,
}

impl MultiplierSystem {
    fn gradient(&self) -> Vector {
        let mut g = self.base.clone();
        for (v, d) in self.values.iter().zip(&self.dirs) {
            g.axpy(*v, d, 1.0);
        }
        g
    }

    /// Coordinate descent on the stationarity residual over free coordinates, clipped to bounds.
    fn refine(&mut self, free: &[bool]) {
        let project = |v: &Vector| -> Vector { Vector::from_fn(v.len(), |i, _| if free[i] { v[i] } else { 0.0 }) };
        let pdirs: Vec<Vector> = self.dirs.iter().map(&project).collect();
        let mut r = project(&self.gradient());
        for _ in 0..50 {
            let mut moved = 0.0f64;
            for j in 0..self.values.len() {
                let d = &pdirs[j];
                let dd = d.norm_squared();
                if dd == 0.0 {
                    continue;
                }
                let old = self.values[j];
                let target = old - r.dot(d) / dd;
                let b = self.bounds[j];
                let new = target.max(b.lo).min(b.hi);
                if new != old {
                    r.axpy(new - old, d, 1.0);
                    self.values[j] = new;
                    moved = moved.max((new - old).abs());
                }
            }
            if moved < 1e-14 {
                break;
            }
        }
    }
}

fn multipliers(
    spec: &SubproblemSpec,
    master: &Master,
    duals: &Vector,
    x: &Vector,
    pe: &PointEval,
) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>, f64), AdcError> {
    let m1 = spec.objectives.len();
    let radius = spec.tol_sub;
    let mut sys = MultiplierSystem {
        values: Vec::new(),
        bounds: Vec::new(),
        dirs: Vec::new(),
        base: (x - &spec.center) * spec.lambda,
    };
    let from_duals = |part: &Option<PiecePart>| -> f64 {
        part.as_ref()
            .map(|pp| pp.rows.iter().zip(&pp.pieces).map(|(&r, &(s, _))| duals[r] * s).sum())
            .unwrap_or(0.0)
    };
    for (p, term) in spec.objectives.iter().enumerate() {
        let (_, su) = term.upper.eval(x)?;
        let bu = if term.split.up.is_zero() {
            Interval::point(0.0)
        } else {
            subgrad_hull(&term.split.up, pe.upper_vals[p], radius)?
        };
        sys.values.push(from_duals(&master.up[p]).max(bu.lo).min(bu.hi));
        sys.bounds.push(bu);
        sys.dirs.push(su);
    }
    for (p, term) in spec.objectives.iter().enumerate() {
        let bl = if term.split.down.is_zero() {
            Interval::point(0.0)
        } else {
            subgrad_hull(&term.split.down, pe.lower_vals[p], radius)?
        };
        let sl = if term.split.down.is_zero() {
            Vector::zeros(x.len())
        } else {
            term.lower.eval(x)?.1
        };
        sys.values.push(from_duals(&master.down[p]).max(bl.lo).min(bl.hi));
        sys.bounds.push(bl);
        sys.dirs.push(sl);
    }
    for (q, model) in spec.constraints.iter().enumerate() {
        let (_, sc) = model.eval(x)?;
        let active = pe.con_vals[q] >= -radius;
        let b = if active {
            Interval::new(0.0, f64::INFINITY)
        } else {
            Interval::point(0.0)
        };
        sys.values.push(duals[master.cons[q].row].max(b.lo).min(b.hi));
        sys.bounds.push(b);
        sys.dirs.push(sc);
    }
    let before = box_residual(&sys.gradient(), x, &spec.lower, &spec.upper);
    let saved = sys.values.clone();
    let free: Vec<bool> = (0..x.len())
        .map(|i| spec.upper[i] - x[i] > 1e-9 && x[i] - spec.lower[i] > 1e-9)
        .collect();
    sys.refine(&free);
    let mut res = box_residual(&sys.gradient(), x, &spec.lower, &spec.upper);
    if res > before {
        sys.values = saved;
        res = before;
    }
    let y1 = sys.values[..m1].to_vec();
    let y2 = sys.values[m1..2 * m1].to_vec();
    let nu = sys.values[2 * m1..].to_vec();
    Ok((y1, y2, nu, res))
}

/// Solve the subproblem to `gap ≤ tol_sub` and `violation ≤ tol_feas`.
/// The exact quadratic master is tried first; if the interior point method cannot resolve it,
/// the same subproblem is solved again with cutting planes, whose masters are linearly constrained.
pub fn solve_subproblem(spec: &SubproblemSpec) -> Result<SubproblemResult, SubproblemError> {
    match solve_inner(spec, false) {
        Err(SubproblemError::Qp(_) | SubproblemError::StallNoProgress { .. }) => solve_inner(spec, true),
        other => other,
    }
}

/// Same, with every convex function handled by cutting planes (no exact representations).
pub fn solve_subproblem_with_cuts(spec: &SubproblemSpec) -> Result<SubproblemResult, SubproblemError> {
    solve_inner(spec, true)
}

/// Largest KKT residual accepted from a master that hit its iteration limit. The cutting-plane
/// master is the last resort and its gap is measured on the true functions, so it is allowed more.
fn master_residual_cap(force_cuts: bool) -> f64 {
    if force_cuts {
        1e-4
    } else {
        1e-6
    }
}

fn solve_inner(spec: &SubproblemSpec, force_cuts: bool) -> Result<SubproblemResult, SubproblemError> {
    validate(spec)?;
    let y = &spec.center;
    for (index, model) in spec.constraints.iter().enumerate() {
        let value = model.value(y)?;
        if value > spec.settings.center_tolerance {
            return Err(SubproblemError::CenterInfeasible { index, value });
        }
    }
    let mut master = Master::layout(spec, force_cuts);
    let cut_slots: Vec<usize> = (0..master.slots.len())
        .filter(|&s| matches!(master.slots[s].source, Source::Cuts(_)))
        .collect();
    for &s in &cut_slots {
        master.add_cut(s, y)?;
    }
    let settings = QpSettings::with_tol(spec.settings.master_tol);

    let mut best_gap = f64::INFINITY;
    let mut since_best = 0;
    let mut last = (f64::INFINITY, f64::INFINITY);
    for round in 1..=spec.settings.max_rounds {
        let prob = master.build(spec);
        let sol = qp::solve_with(&prob, &settings)?;
        match sol.status {
            QpStatus::Infeasible => {
                return Err(SubproblemError::MasterInfeasible(format!(
                    "round {round}: {} linear and {} quadratic rows",
                    prob.lin_ineq.len(),
                    prob.quad_ineq.len()
                )))
            }
            QpStatus::MaxIter if sol.kkt_residual > master_residual_cap(force_cuts) => {
                return Err(SubproblemError::Qp(QpError::NumericalBreakdown(format!(
                    "master stopped at residual {:.3e}",
                    sol.kkt_residual
                ))))
            }
            _ => {}
        }
        let x = Vector::from_fn(master.n, |i, _| sol.x[i].max(spec.lower[i]).min(spec.upper[i]));
        let taus: f64 = master
            .up
            .iter()
            .chain(&master.down)
            .flatten()
            .map(|pp| sol.x[pp.tau])
            .sum();
        let master_value = taus + 0.5 * spec.lambda * (&x - y).norm_squared();
        let pe = evaluate(spec, &x)?;
        let total = pe.surrogate + 0.5 * spec.lambda * (&x - y).norm_squared();
        let gap = (total - master_value).max(0.0);
        last = (gap, pe.violation);

        if gap <= spec.tol_sub && pe.violation <= spec.tol_feas {
            let (y1, y2, nu, stationarity) = multipliers(spec, &master, &sol.duals_lin, &x, &pe)?;
            return Ok(SubproblemResult {
                x_plus: x,
                y1,
                y2,
                constraint_duals: nu,
                gap,
                feas_violation: pe.violation,
                surrogate: pe.surrogate,
                master_value,
                stationarity,
                rounds: round,
            });
        }
        if cut_slots.is_empty() {
            // Exact master: nothing to refine, only round-off separates it from the truth.
            return Err(SubproblemError::StallNoProgress {
                rounds: round,
                gap,
                violation: pe.violation,
            });
        }
        let score = gap + pe.violation;
        if score < best_gap * (1.0 - 1e-9) {
            best_gap = score;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= spec.settings.patience {
                return Err(SubproblemError::StallNoProgress {
                    rounds: round,
                    gap,
                    violation: pe.violation,
                });
            }
        }
        for &s in &cut_slots {
            if let Source::Cuts(cuts) = &mut master.slots[s].source {
                for cut in cuts.iter_mut() {
                    cut.dual = sol.duals_lin[cut.row];
                }
            }
            master.add_cut(s, &x)?;
        }
        master.evict(spec.settings.max_cuts_per_piece);
    }
    Err(SubproblemError::StallNoProgress {
        rounds: spec.settings.max_rounds,
        gap: last.0,
        violation: last.1,
    })
}
