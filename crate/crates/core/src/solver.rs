//! The double-loop prox-ADC method: the outer loop advances the approximation
//! level `k`, the inner loop minimizes convex majorants with a proximal term
//! until the inner stopping rule holds, and the run ends at the first level
//! `k₀ ≥ k̄` meeting the termination inequalities.

use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adc::{build_lower, build_upper, build_upper_with_tail, AdcError, SharedFamily, UpperModel};
use crate::convex1d::{Convex1dError, MonotoneSplit, UnivariateConvex};
use crate::qp::Vector;
use crate::subproblem::{
    solve_subproblem, ObjectiveTerm, SubproblemError, SubproblemResult, SubproblemSettings,
    SubproblemSpec,
};

/// Tolerance of the strict feasibility margin check at construction.
pub const MARGIN_TOL: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProxAdcError {
    #[error("invalid problem: {0}")]
    InvalidProblem(String),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("x0 violates the strict feasibility margin of constraint {index} by {excess:.3e}")]
    MarginViolated { index: usize, excess: f64 },
    #[error("no level k ≥ k̄ satisfies the termination inequalities in the log")]
    NotTerminated,
    #[error(transparent)]
    Subproblem(#[from] SubproblemError),
    #[error(transparent)]
    Oracle(#[from] AdcError),
    #[error(transparent)]
    Convex1d(#[from] Convex1dError),
}

/// One objective term `φ(f(x))` with real-valued `φ`.
#[derive(Debug, Clone)]
pub struct Objective {
    pub phi: UnivariateConvex,
    pub family: SharedFamily,
}

/// `min Σ_p φ_p(f_p(x))` subject to `f_q(x) ≤ 0` and a box.
#[derive(Debug, Clone)]
pub struct CompositeProblem {
    pub objectives: Vec<Objective>,
    pub constraints: Vec<SharedFamily>,
    pub lower: Vector,
    pub upper: Vector,
    pub x0: Vector,
    splits: Vec<MonotoneSplit>,
    i2_flags: Vec<bool>,
}

impl CompositeProblem {
    /// Validates dimensions, splits every `φ_p`, and checks the strict feasibility margin at `x0`.
    pub fn new(
        objectives: Vec<Objective>,
        constraints: Vec<SharedFamily>,
        lower: Vector,
        upper: Vector,
        x0: Vector,
    ) -> Result<Self, ProxAdcError> {
        let n = x0.len();
        if lower.len() != n || upper.len() != n {
            return Err(ProxAdcError::InvalidProblem("box does not match x0".into()));
        }
        if (0..n).any(|i| !(lower[i] <= upper[i])) {
            return Err(ProxAdcError::InvalidProblem("empty box".into()));
        }
        if (0..n).any(|i| x0[i] < lower[i] - 1e-12 || x0[i] > upper[i] + 1e-12) {
            return Err(ProxAdcError::InvalidProblem("x0 lies outside the box".into()));
        }
        for fam in objectives.iter().map(|o| &o.family).chain(&constraints) {
            if fam.dim() != n {
                return Err(ProxAdcError::InvalidProblem(format!(
                    "family {} has dimension {}, expected {n}",
                    fam.name(),
                    fam.dim()
                )));
            }
        }
        let mut splits = Vec::with_capacity(objectives.len());
        for o in &objectives {
            let dom = o.phi.effective_domain();
            if dom.lo.is_finite() || dom.hi.is_finite() {
                return Err(ProxAdcError::InvalidProblem(
                    "objective outer functions must be real-valued".into(),
                ));
            }
            splits.push(o.phi.monotone_split()?);
        }
        let i2_flags = splits.iter().map(MonotoneSplit::has_down).collect();
        let problem = Self {
            objectives,
            constraints,
            lower,
            upper,
            x0,
            splits,
            i2_flags,
        };
        let (_, margins) = problem.strict_feasibility_check(&problem.x0)?;
        if let Some((index, m)) = margins
            .iter()
            .enumerate()
            .find(|(_, m)| **m < -MARGIN_TOL)
        {
            return Err(ProxAdcError::MarginViolated {
                index,
                excess: -m,
            });
        }
        Ok(problem)
    }

    pub fn dim(&self) -> usize {
        self.x0.len()
    }

    /// Total number of composite terms, objectives plus constraints.
    pub fn m(&self) -> usize {
        self.objectives.len() + self.constraints.len()
    }

    pub fn splits(&self) -> &[MonotoneSplit] {
        &self.splits
    }

    /// `true` for objectives whose outer function has a nonincreasing part.
    pub fn i2_flags(&self) -> &[bool] {
        &self.i2_flags
    }

    fn families(&self) -> impl Iterator<Item = &SharedFamily> {
        self.objectives.iter().map(|o| &o.family).chain(&self.constraints)
    }

    /// Margins `−alpha_tail(0) − f⁰_q(x)` per constraint; feasible when all are nonnegative.
    pub fn strict_feasibility_check(&self, x: &Vector) -> Result<(bool, Vec<f64>), ProxAdcError> {
        let mut margins = Vec::with_capacity(self.constraints.len());
        for fam in &self.constraints {
            margins.push(-fam.alpha_tail(0) - fam.eval(0, x)?.f);
        }
        let ok = margins.iter().all(|m| *m >= -MARGIN_TOL);
        Ok((ok, margins))
    }

    /// `Σ_p φ_p(fᵏ_p(x))`.
    pub fn level_objective(&self, k: usize, x: &Vector) -> Result<f64, ProxAdcError> {
        let mut total = 0.0;
        for o in &self.objectives {
            total += o.phi.value(o.family.eval(k, x)?.f);
        }
        Ok(total)
    }

    /// `Σ_p φ_p(f_p(x))` when every family knows its limit, otherwise `None`.
    pub fn true_objective(&self, x: &Vector) -> Result<Option<f64>, ProxAdcError> {
        let mut total = 0.0;
        for o in &self.objectives {
            match o.family.limit_value(x)? {
                Some(v) => total += o.phi.value(v),
                None => return Ok(None),
            }
        }
        Ok(Some(total))
    }

    /// `max_q fᵏ_q(x)`, or `−∞` without constraints.
    pub fn max_constraint(&self, k: usize, x: &Vector) -> Result<f64, ProxAdcError> {
        let mut worst = f64::NEG_INFINITY;
        for fam in &self.constraints {
            worst = worst.max(fam.eval(k, x)?.f);
        }
        Ok(worst)
    }

    /// `ℓ_k`, the largest curvature bound over all families.
    pub fn ell(&self, k: usize) -> f64 {
        self.families().map(|f| f.ell(k)).fold(0.0, f64::max)
    }

    /// `max_p Σ_{k' ≥ k} α̂^{k'}_p`; objectives contribute zero.
    pub fn max_tail(&self, k: usize) -> f64 {
        self.constraints
            .iter()
            .map(|f| f.alpha_tail(k))
            .fold(0.0, f64::max)
    }

    /// Smoothing parameter of the first family that reports one.
    pub fn gamma(&self, k: usize) -> Option<f64> {
        self.families().find_map(|f| f.gamma(k))
    }
}

/// `scale / (k + shift)^rho`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerSeq {
    pub scale: f64,
    pub shift: f64,
    pub rho: f64,
}

impl PowerSeq {
    /// `1 / (k + 1)^rho`.
    pub fn standard(rho: f64) -> Self {
        Self {
            scale: 1.0,
            shift: 1.0,
            rho,
        }
    }

    pub fn value(&self, k: usize) -> f64 {
        self.scale / (k as f64 + self.shift).powf(self.rho)
    }

    fn validate(&self, name: &str) -> Result<(), ProxAdcError> {
        if !(self.scale > 0.0 && self.shift > 0.0 && self.rho > 0.0) {
            return Err(ProxAdcError::InvalidParams(format!(
                "{name} needs positive scale, shift and rho, got {self:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProxAdcParams {
    pub lambda: f64,
    pub eps: PowerSeq,
    pub delta: PowerSeq,
    pub eta_bar: f64,
    pub beta_bar: f64,
    pub k_bar: usize,
    pub max_outer: usize,
    pub max_inner: usize,
    /// Subproblem tolerance as a fraction of `min(ε_k, δ_k)`.
    pub tol_sub_ratio: f64,
    pub tol_feas: f64,
    pub subproblem: SubproblemSettings,
}

impl Default for ProxAdcParams {
    fn default() -> Self {
        Self {
            lambda: 5.0,
            eps: PowerSeq::standard(1.5),
            delta: PowerSeq::standard(1.5),
            eta_bar: 1e-2,
            beta_bar: 1e-2,
            k_bar: 10,
            max_outer: 200,
            max_inner: 500,
            tol_sub_ratio: 0.1,
            tol_feas: 1e-8,
            subproblem: SubproblemSettings::default(),
        }
    }
}

impl ProxAdcParams {
    /// Parameters with `ε_k = δ_k = 1/(k+1)^rho`.
    pub fn with_rho(rho: f64) -> Self {
        Self {
            eps: PowerSeq::standard(rho),
            delta: PowerSeq::standard(rho),
            ..Self::default()
        }
    }

    /// `min(ε_k, δ_k)·tol_sub_ratio`.
    pub fn tol_sub(&self, k: usize) -> f64 {
        self.tol_sub_ratio * self.eps.value(k).min(self.delta.value(k))
    }

    /// Positivity, and monotonicity of `ε_k`, `δ_k`, `δ_k/(λ+ℓ_k)` on `k = 0..=max_outer`.
    pub fn validate(&self, problem: &CompositeProblem) -> Result<(), ProxAdcError> {
        if !(self.lambda > 0.0 && self.eta_bar > 0.0 && self.beta_bar > 0.0) {
            return Err(ProxAdcError::InvalidParams(
                "lambda, eta_bar and beta_bar must be positive".into(),
            ));
        }
        if !(self.tol_sub_ratio > 0.0 && self.tol_feas > 0.0) {
            return Err(ProxAdcError::InvalidParams("tolerances must be positive".into()));
        }
        if self.max_inner == 0 {
            return Err(ProxAdcError::InvalidParams("max_inner must be positive".into()));
        }
        self.eps.validate("eps")?;
        self.delta.validate("delta")?;
        let ratio = |k: usize| self.delta.value(k) / (self.lambda + problem.ell(k));
        for k in 0..self.max_outer {
            let checks = [
                ("eps", self.eps.value(k + 1) <= self.eps.value(k)),
                ("delta", self.delta.value(k + 1) <= self.delta.value(k)),
                ("delta/(lambda+ell)", ratio(k + 1) <= ratio(k)),
            ];
            if let Some((name, _)) = checks.iter().find(|(_, ok)| !ok) {
                return Err(ProxAdcError::InvalidParams(format!(
                    "{name} increases between k = {k} and k = {}",
                    k + 1
                )));
            }
        }
        Ok(())
    }
}

/// One solved subproblem, i.e. one inner iteration `(k, i)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterRecord {
    pub outer_k: usize,
    pub inner_i: usize,
    pub total_inner: usize,
    /// True objective at `x^{k,i+1}`, `NaN` when a family has no known limit.
    pub objective_f: f64,
    /// `Σ φ_p(fᵏ_p(x^{k,i+1}))`.
    pub objective_fk: f64,
    /// `Σ φ_p(fᵏ_p(x^{k,i}))`, the left side of the descent inequality one step earlier.
    pub objective_fk_anchor: f64,
    pub surrogate: f64,
    pub step_norm: f64,
    pub max_constraint: f64,
    pub subproblem_gap: f64,
    pub multiplier_norm: f64,
    /// `NaN` when no family reports a smoothing parameter.
    pub gamma_k: f64,
    pub eps_k: f64,
    pub delta_k: f64,
    pub ell_k: f64,
    pub max_tail_k: f64,
    pub tol_sub: f64,
    pub inner_stop: bool,
    pub wall_ms: f64,
}

impl IterRecord {
    /// Slack of `Hᵏ(x^{k,i+1}) ≤ Hᵏ(x^{k,i}) − λ/2‖step‖² + 2·tol_sub`.
    pub fn descent_slack(&self, lambda: f64) -> f64 {
        self.objective_fk_anchor - 0.5 * lambda * self.step_norm * self.step_norm
            + 2.0 * self.tol_sub
            - self.objective_fk
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub records: Vec<IterRecord>,
}

impl RunLog {
    /// Final record of each outer iteration whose inner loop stopped.
    pub fn completed_levels(&self) -> Vec<&IterRecord> {
        self.records.iter().filter(|r| r.inner_stop).collect()
    }

    /// Largest multiplier norm logged up to and including level `k`.
    pub fn max_multiplier_norm(&self, k: usize) -> f64 {
        self.records
            .iter()
            .filter(|r| r.outer_k <= k)
            .map(|r| r.multiplier_norm)
            .fold(0.0, f64::max)
    }
}

/// The three left-hand sides of the termination inequalities at one level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TerminationValues {
    /// `max_p tail_p(k) + ε_k`.
    pub tail_plus_eps: f64,
    /// `δ_k / (λ + ℓ_k)`.
    pub scaled_delta: f64,
    /// `δ_k`.
    pub delta: f64,
}

impl TerminationValues {
    pub fn from_record(r: &IterRecord, lambda: f64) -> Self {
        Self {
            tail_plus_eps: r.max_tail_k + r.eps_k,
            scaled_delta: r.delta_k / (lambda + r.ell_k),
            delta: r.delta_k,
        }
    }

    pub fn holds(&self, eta_bar: f64, beta_bar: f64) -> bool {
        self.tail_plus_eps <= beta_bar && self.scaled_delta <= beta_bar && self.delta <= eta_bar
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub k0: usize,
    pub termination: TerminationValues,
    pub eta_bar: f64,
    pub beta_bar: f64,
    pub k_bar: usize,
    pub lambda: f64,
    pub m: usize,
    /// Largest multiplier norm observed up to `k₀`; a lower estimate of the true bound.
    pub d_hat_observed: f64,
    /// `(η̄·max{1, √(2m)·D̂}, β̄, k̄)`.
    pub quality: (f64, f64, usize),
    pub x: Vec<f64>,
    pub objective_f: f64,
}

/// `η̄·max{1, √(2m)·D̂}`.
pub fn quality_residual(eta_bar: f64, m: usize, d_hat: f64) -> f64 {
    eta_bar * 1.0f64.max((2.0 * m as f64).sqrt() * d_hat)
}

/// Rescans the log for the smallest completed level `k₀ ≥ k̄` meeting the termination inequalities.
pub fn certify(
    log: &RunLog,
    params: &ProxAdcParams,
    m: usize,
    x: &Vector,
) -> Result<Certificate, ProxAdcError> {
    let last = log
        .completed_levels()
        .into_iter()
        .filter(|r| r.outer_k >= params.k_bar)
        .find(|r| TerminationValues::from_record(r, params.lambda).holds(params.eta_bar, params.beta_bar))
        .ok_or(ProxAdcError::NotTerminated)?;
    let d_hat = log.max_multiplier_norm(last.outer_k);
    Ok(Certificate {
        k0: last.outer_k,
        termination: TerminationValues::from_record(last, params.lambda),
        eta_bar: params.eta_bar,
        beta_bar: params.beta_bar,
        k_bar: params.k_bar,
        lambda: params.lambda,
        m,
        d_hat_observed: d_hat,
        quality: (quality_residual(params.eta_bar, m, d_hat), params.beta_bar, params.k_bar),
        x: x.iter().copied().collect(),
        objective_f: last.objective_f,
    })
}

/// Surrogate models built at the inner anchor `x^{k,i}`.
#[derive(Debug, Clone)]
pub struct InnerState {
    pub k: usize,
    pub anchor: Vector,
    pub objectives: Vec<ObjectiveTerm>,
    pub constraints: Vec<UpperModel>,
    pub i2_flags: Vec<bool>,
    pub eps: f64,
    pub delta: f64,
    pub lambda: f64,
    pub ell: f64,
}

impl InnerState {
    pub fn build(
        problem: &CompositeProblem,
        k: usize,
        anchor: &Vector,
        params: &ProxAdcParams,
    ) -> Result<Self, ProxAdcError> {
        let mut objectives = Vec::with_capacity(problem.objectives.len());
        for (o, split) in problem.objectives.iter().zip(problem.splits()) {
            objectives.push(ObjectiveTerm {
                split: split.clone(),
                upper: build_upper_with_tail(&o.family, k, anchor, 0.0)?,
                lower: build_lower(&o.family, k, anchor)?,
            });
        }
        let mut constraints = Vec::with_capacity(problem.constraints.len());
        for fam in &problem.constraints {
            constraints.push(build_upper(fam, k, anchor)?);
        }
        Ok(Self {
            k,
            anchor: anchor.clone(),
            objectives,
            constraints,
            i2_flags: problem.i2_flags().to_vec(),
            eps: params.eps.value(k),
            delta: params.delta.value(k),
            lambda: params.lambda,
            ell: problem.ell(k),
        })
    }

    pub fn subproblem(&self, problem: &CompositeProblem, params: &ProxAdcParams) -> SubproblemSpec {
        SubproblemSpec {
            objectives: self.objectives.clone(),
            constraints: self.constraints.clone(),
            lower: problem.lower.clone(),
            upper: problem.upper.clone(),
            center: self.anchor.clone(),
            lambda: self.lambda,
            tol_sub: params.tol_sub(self.k),
            tol_feas: params.tol_feas,
            settings: params.subproblem,
        }
    }
}

/// Slacks of the three inner stopping conditions; each holds when its slack is nonnegative.
#[derive(Debug, Clone, PartialEq)]
pub struct InnerStopCheck {
    /// `fᵏ_p(x) + tail_p + ε_k − upper_p(x)` for objectives then constraints.
    pub upper_slack: Vec<f64>,
    /// `lower_p(x) − fᵏ_p(x) + ε_k` for objectives in I₂, `None` otherwise.
    pub lower_slack: Vec<Option<f64>>,
    /// `δ_k/(λ+ℓ_k) − ‖x − anchor‖`.
    pub step_slack: f64,
    pub cond1: bool,
    pub cond2: bool,
    pub cond3: bool,
}

impl InnerStopCheck {
    pub fn all(&self) -> bool {
        self.cond1 && self.cond2 && self.cond3
    }
}

pub fn inner_stop_check(state: &InnerState, x_new: &Vector) -> Result<InnerStopCheck, ProxAdcError> {
    let eps = state.eps;
    let mut upper_slack = Vec::with_capacity(state.objectives.len() + state.constraints.len());
    let mut lower_slack = Vec::with_capacity(state.objectives.len());
    for (term, &i2) in state.objectives.iter().zip(&state.i2_flags) {
        let fk = term.upper.family.eval(state.k, x_new)?.f;
        upper_slack.push(fk + term.upper.tail + eps - term.upper.value(x_new)?);
        lower_slack.push(if i2 {
            Some(term.lower.value(x_new)? - fk + eps)
        } else {
            None
        });
    }
    for model in &state.constraints {
        let fk = model.family.eval(state.k, x_new)?.f;
        upper_slack.push(fk + model.tail + eps - model.value(x_new)?);
    }
    let step_slack = state.delta / (state.lambda + state.ell) - (x_new - &state.anchor).norm();
    Ok(InnerStopCheck {
        cond1: upper_slack.iter().all(|s| *s >= 0.0),
        cond2: lower_slack.iter().flatten().all(|s| *s >= 0.0),
        cond3: step_slack >= 0.0,
        upper_slack,
        lower_slack,
        step_slack,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RunStatus {
    Certified,
    /// No `k₀` within `max_outer`; the returned point is the best logged iterate.
    MaxOuterExceeded,
    /// An inner loop reached `max_inner` at the logged level.
    InnerLoopStalled,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub status: RunStatus,
    pub x: Vector,
    pub certificate: Option<Certificate>,
    pub log: RunLog,
}

/// Measurements of one inner iteration, shared by the full run and fixed-level loops.
#[derive(Debug, Clone)]
pub struct InnerStep {
    pub state: InnerState,
    pub result: SubproblemResult,
    pub check: InnerStopCheck,
    pub record: IterRecord,
}

/// Builds the models at `anchor`, solves the subproblem, and measures the result.
pub fn inner_step(
    problem: &CompositeProblem,
    params: &ProxAdcParams,
    k: usize,
    i: usize,
    total_inner: usize,
    anchor: &Vector,
    clock: &Instant,
) -> Result<InnerStep, ProxAdcError> {
    let state = InnerState::build(problem, k, anchor, params)?;
    let result = solve_subproblem(&state.subproblem(problem, params))?;
    let x_new = &result.x_plus;
    let check = inner_stop_check(&state, x_new)?;
    let record = IterRecord {
        outer_k: k,
        inner_i: i,
        total_inner,
        objective_f: problem.true_objective(x_new)?.unwrap_or(f64::NAN),
        objective_fk: problem.level_objective(k, x_new)?,
        objective_fk_anchor: problem.level_objective(k, anchor)?,
        surrogate: result.surrogate,
        step_norm: (x_new - anchor).norm(),
        max_constraint: problem.max_constraint(k, x_new)?,
        subproblem_gap: result.gap,
        multiplier_norm: result.multiplier_norm(),
        gamma_k: problem.gamma(k).unwrap_or(f64::NAN),
        eps_k: state.eps,
        delta_k: state.delta,
        ell_k: state.ell,
        max_tail_k: problem.max_tail(k),
        tol_sub: params.tol_sub(k),
        inner_stop: check.all(),
        wall_ms: clock.elapsed().as_secs_f64() * 1e3,
    };
    Ok(InnerStep {
        state,
        result,
        check,
        record,
    })
}

/// Runs the method from `problem.x0`.
pub fn run(problem: &CompositeProblem, params: &ProxAdcParams) -> Result<RunOutput, ProxAdcError> {
    run_observed(problem, params, &mut |_| {})
}

/// Same as [`run`], calling `observer` on every record as it is logged.
pub fn run_observed(
    problem: &CompositeProblem,
    params: &ProxAdcParams,
    observer: &mut dyn FnMut(&IterRecord),
) -> Result<RunOutput, ProxAdcError> {
    params.validate(problem)?;
    let clock = Instant::now();
    let mut log = RunLog::default();
    let mut x = problem.x0.clone();
    let mut best: Option<(f64, Vector)> = None;
    let mut total = 0usize;
    for k in 0..params.max_outer {
        let mut anchor = x.clone();
        let mut stopped = false;
        for i in 0..params.max_inner {
            total += 1;
            let step = inner_step(problem, params, k, i, total, &anchor, &clock)?;
            let x_new = step.result.x_plus.clone();
            let score = if step.record.objective_f.is_nan() {
                step.record.objective_fk
            } else {
                step.record.objective_f
            };
            if best.as_ref().is_none_or(|(b, _)| score < *b) {
                best = Some((score, x_new.clone()));
            }
            observer(&step.record);
            log.records.push(step.record);
            if step.check.all() {
                let values = TerminationValues::from_record(log.records.last().expect("pushed"), params.lambda);
                if k >= params.k_bar && values.holds(params.eta_bar, params.beta_bar) {
                    let certificate = certify(&log, params, problem.m(), &x_new)?;
                    return Ok(RunOutput {
                        status: RunStatus::Certified,
                        x: x_new,
                        certificate: Some(certificate),
                        log,
                    });
                }
                x = anchor.clone();
                stopped = true;
                break;
            }
            anchor = x_new;
        }
        if !stopped {
            return Ok(RunOutput {
                status: RunStatus::InnerLoopStalled,
                x: anchor,
                certificate: None,
                log,
            });
        }
    }
    Ok(RunOutput {
        status: RunStatus::MaxOuterExceeded,
        x: best.map(|(_, x)| x).unwrap_or(x),
        certificate: None,
        log,
    })
}
