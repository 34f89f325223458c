//! Random inverse optimal-value instances, their composite problems, the
//! feasibility phase used to find a strictly feasible start, and the JSON format.

use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adc::{AdcError, FixedLevelFamily, ScaledFamily, SharedFamily};
use crate::convex1d::UnivariateConvex;
use crate::pme::{estimate_lipschitz, PmeFamily, PmeSchedule, QpValueFunction};
use crate::qp::{Matrix, Vector};
use crate::solver::{inner_step, CompositeProblem, IterRecord, Objective, ProxAdcError, ProxAdcParams};

pub const SCHEMA: &str = "prox-adc-instance/v1";
pub const Q_GENERATION: &str = "Q = M^T M / d + I, M iid standard normal d x d";
pub const MAX_ATTEMPTS: usize = 20;
/// Box points at which every inner QP must solve for an instance to be accepted.
pub const FEASIBILITY_SAMPLES: usize = 64;
/// Relative shrink of each dead zone so that a tiny residual still leaves a strict margin.
pub const FEAS_BUFFER: f64 = 1e-6;
/// Step length below which the feasibility iterates count as stationary.
pub const FEAS_STATIONARY_STEP: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum InstanceError {
    #[error("generation rejected after {attempts} attempts: {last}")]
    GenerationRejected { attempts: usize, last: String },
    #[error(
        "empty margin for constraint {index}: tail {tail:.3e} ≥ eps {eps:.3e}; k_tilde ≥ {required_k_tilde} needed"
    )]
    MarginEmpty {
        index: usize,
        tail: f64,
        eps: f64,
        required_k_tilde: u32,
    },
    #[error("invalid instance: {0}")]
    Invalid(String),
    #[error("instance JSON: {0}")]
    Json(String),
    #[error(transparent)]
    Oracle(#[from] AdcError),
    #[error(transparent)]
    Solver(#[from] ProxAdcError),
}

/// `min Σ_{p<m₁} |ν_p − f_p(x)|` over `[−1,1]ⁿ`, with relative-error constraints for `p ≥ m₁`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InverseOptValInstance {
    pub schema: String,
    pub n: usize,
    pub m: usize,
    pub m1: usize,
    pub d: usize,
    pub l: usize,
    pub functions: Vec<QpValueFunction>,
    pub nu: Vec<f64>,
    pub x_star: Vec<f64>,
    pub box_lower: Vec<f64>,
    pub box_upper: Vec<f64>,
    pub eps_feas: f64,
    pub seed: u64,
    pub q_generation: String,
    /// Reasons for rejected draws before the accepted one.
    pub rejections: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GenConfig {
    pub n: usize,
    pub m: usize,
    pub m1: usize,
    pub d: usize,
    pub l: usize,
    pub eps: f64,
}

impl GenConfig {
    pub fn unconstrained() -> Self {
        Self {
            n: 10,
            m: 11,
            m1: 11,
            d: 10,
            l: 5,
            eps: 0.0,
        }
    }

    pub fn constrained() -> Self {
        Self {
            m1: 8,
            eps: 0.1,
            ..Self::unconstrained()
        }
    }
}

fn normal_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    let data: Vec<f64> = (0..rows * cols).map(|_| rng.sample(StandardNormal)).collect();
    Matrix::from_row_slice(rows, cols, &data)
}

fn normal_vector(rng: &mut ChaCha8Rng, len: usize) -> Vector {
    Vector::from_fn(len, |_, _| rng.sample(StandardNormal))
}

fn draw_function(rng: &mut ChaCha8Rng, n: usize, d: usize, l: usize) -> QpValueFunction {
    let scale = 1.0 / (n as f64).sqrt();
    let c = normal_vector(rng, d);
    let cmat = normal_matrix(rng, d, n) * scale;
    let mq = normal_matrix(rng, d, d);
    let q = mq.transpose() * &mq / d as f64 + Matrix::identity(d, d);
    let q = (&q + q.transpose()) * 0.5;
    let a = normal_matrix(rng, l, n) * scale;
    let bmat = normal_matrix(rng, l, d);
    let b = normal_vector(rng, l);
    QpValueFunction {
        c,
        cmat,
        q,
        a,
        bmat,
        b,
    }
}

/// Uniform point of the box `[lower, upper]`.
pub fn uniform_point(rng: &mut ChaCha8Rng, lower: &[f64], upper: &[f64]) -> Vector {
    Vector::from_fn(lower.len(), |i, _| rng.random_range(lower[i]..=upper[i]))
}

/// Random start for a run, drawn from a stream independent of the instance data.
pub fn random_start(seed: u64, n: usize) -> Vector {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    uniform_point(&mut rng, &vec![-1.0; n], &vec![1.0; n])
}

fn check_inner_feasibility(
    functions: &[QpValueFunction],
    points: &[Vector],
) -> Result<(), String> {
    for (p, f) in functions.iter().enumerate() {
        for x in points {
            if let Err(e) = f.solve_inner(x) {
                return Err(format!("function {p}: {e}"));
            }
        }
    }
    Ok(())
}

fn generate(seed: u64, cfg: GenConfig) -> Result<InverseOptValInstance, InstanceError> {
    let GenConfig { n, m, m1, d, l, eps } = cfg;
    if n == 0 || m == 0 || d == 0 || l == 0 || m1 > m || !(eps >= 0.0) {
        return Err(InstanceError::Invalid(format!("bad dimensions {cfg:?}")));
    }
    let lower = vec![-1.0; n];
    let upper = vec![1.0; n];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sample_rng = ChaCha8Rng::seed_from_u64(seed);
    sample_rng.set_stream(2);
    let mut rejections = Vec::new();
    for _ in 0..MAX_ATTEMPTS {
        let functions: Vec<QpValueFunction> = (0..m).map(|_| draw_function(&mut rng, n, d, l)).collect();
        let u = normal_vector(&mut rng, n);
        let x_star = &u / u.norm();
        let mut points: Vec<Vector> = (0..FEASIBILITY_SAMPLES)
            .map(|_| uniform_point(&mut sample_rng, &lower, &upper))
            .collect();
        points.push(x_star.clone());
        if let Err(reason) = check_inner_feasibility(&functions, &points) {
            rejections.push(reason);
            continue;
        }
        let nu = functions
            .iter()
            .map(|f| f.value(&x_star))
            .collect::<Result<Vec<_>, _>>()?;
        return Ok(InverseOptValInstance {
            schema: SCHEMA.to_string(),
            n,
            m,
            m1,
            d,
            l,
            functions,
            nu,
            x_star: x_star.iter().copied().collect(),
            box_lower: lower,
            box_upper: upper,
            eps_feas: eps,
            seed,
            q_generation: Q_GENERATION.to_string(),
            rejections,
        });
    }
    Err(InstanceError::GenerationRejected {
        attempts: MAX_ATTEMPTS,
        last: rejections.pop().unwrap_or_default(),
    })
}

/// Instance with every term in the objective.
pub fn gen_unconstrained(
    seed: u64,
    n: usize,
    m: usize,
    d: usize,
    l: usize,
) -> Result<InverseOptValInstance, InstanceError> {
    generate(
        seed,
        GenConfig {
            n,
            m,
            m1: m,
            d,
            l,
            eps: 0.0,
        },
    )
}

/// Instance whose terms `p ≥ m1` become relative-error constraints with tolerance `eps`.
pub fn gen_constrained(
    seed: u64,
    n: usize,
    m: usize,
    m1: usize,
    eps: f64,
    d: usize,
    l: usize,
) -> Result<InverseOptValInstance, InstanceError> {
    if !(eps > 0.0) {
        return Err(InstanceError::Invalid("constraint tolerance must be positive".into()));
    }
    generate(seed, GenConfig { n, m, m1, d, l, eps })
}

impl InverseOptValInstance {
    pub fn validate(&self) -> Result<(), InstanceError> {
        if self.schema != SCHEMA {
            return Err(InstanceError::Invalid(format!(
                "schema {:?}, expected {SCHEMA:?}",
                self.schema
            )));
        }
        let n = self.n;
        let sizes_ok = self.functions.len() == self.m
            && self.nu.len() == self.m
            && self.m1 <= self.m
            && self.x_star.len() == n
            && self.box_lower.len() == n
            && self.box_upper.len() == n;
        if !sizes_ok {
            return Err(InstanceError::Invalid("inconsistent dimensions".into()));
        }
        for f in &self.functions {
            f.validate()?;
            if f.n() != n || f.d() != self.d || f.l() != self.l {
                return Err(InstanceError::Invalid("function shape differs from the header".into()));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("instance serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, InstanceError> {
        let inst: Self = serde_json::from_str(text).map_err(|e| InstanceError::Json(e.to_string()))?;
        inst.validate()?;
        Ok(inst)
    }

    pub fn lower(&self) -> Vector {
        Vector::from_column_slice(&self.box_lower)
    }

    pub fn upper(&self) -> Vector {
        Vector::from_column_slice(&self.box_upper)
    }

    pub fn x_star(&self) -> Vector {
        Vector::from_column_slice(&self.x_star)
    }

    pub fn is_constrained(&self) -> bool {
        self.m1 < self.m
    }

    /// `max{1, |ν_p|}`.
    pub fn sigma(&self, p: usize) -> f64 {
        self.nu[p].abs().max(1.0)
    }

    /// `Σ_{p<m₁} |ν_p − f_p(x)|`.
    pub fn true_objective(&self, x: &Vector) -> Result<f64, InstanceError> {
        let mut total = 0.0;
        for p in 0..self.m1 {
            total += (self.nu[p] - self.functions[p].value(x)?).abs();
        }
        Ok(total)
    }

    /// Largest relative constraint violation `|ν_p − f_p(x)|/σ_p − ε` over `p ≥ m₁`.
    pub fn max_relative_violation(&self, x: &Vector) -> Result<f64, InstanceError> {
        let mut worst = f64::NEG_INFINITY;
        for p in self.m1..self.m {
            let r = (self.nu[p] - self.functions[p].value(x)?).abs() / self.sigma(p) - self.eps_feas;
            worst = worst.max(r);
        }
        Ok(worst)
    }

    /// Sampled Lipschitz bounds of the constraint functions, in constraint order.
    pub fn constraint_lipschitz(&self, n_samples: usize, safety: f64) -> Result<Vec<f64>, InstanceError> {
        (self.m1..self.m)
            .map(|p| {
                estimate_lipschitz(
                    &self.functions[p],
                    &self.lower(),
                    &self.upper(),
                    n_samples,
                    safety,
                    self.seed.wrapping_add(p as u64),
                )
                .map_err(InstanceError::from)
            })
            .collect()
    }
}

/// Approximation schedule `γ_k = γ₀/(k + k̃)^ρ` shared by all terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmoothingConfig {
    pub gamma0: f64,
    pub rho: f64,
    pub k_tilde: u32,
}

impl SmoothingConfig {
    pub fn new(rho: f64) -> Self {
        Self {
            gamma0: 1.0,
            rho,
            k_tilde: 1,
        }
    }

    fn schedule(&self, lipschitz_l: f64) -> PmeSchedule {
        PmeSchedule {
            gamma0: self.gamma0,
            rho: self.rho,
            k_tilde: self.k_tilde,
            lipschitz_l,
        }
    }

    /// `γ₀ L² / (2 k̃^ρ σ)`, the total tail of a scaled constraint row.
    pub fn row_tail(&self, lipschitz_l: f64, sigma: f64) -> f64 {
        self.schedule(lipschitz_l).tail_constant() * self.schedule(lipschitz_l).gamma(0) / sigma
    }

    /// Smallest `k̃` with `γ₀ L²/(2 k̃^ρ σ) < eps`.
    pub fn required_k_tilde(&self, lipschitz_l: f64, sigma: f64, eps: f64) -> u32 {
        let ratio = self.gamma0 * lipschitz_l * lipschitz_l / (2.0 * sigma * eps);
        (ratio.powf(1.0 / self.rho).floor() as u32 + 1).max(1)
    }
}

fn pme(inst: &InverseOptValInstance, p: usize, cfg: &SmoothingConfig, l: f64) -> Result<Arc<PmeFamily>, InstanceError> {
    Ok(Arc::new(PmeFamily::new(inst.functions[p].clone(), cfg.schedule(l))?))
}

/// `min Σ_p |ν_p − f_p(x)|` over all `m` terms, ignoring any constraint split.
pub fn unconstrained_problem(
    inst: &InverseOptValInstance,
    cfg: &SmoothingConfig,
    x0: Vector,
) -> Result<CompositeProblem, InstanceError> {
    let mut objectives = Vec::with_capacity(inst.m);
    for p in 0..inst.m {
        objectives.push(Objective {
            phi: UnivariateConvex::abs_dev(inst.nu[p]),
            family: pme(inst, p, cfg, 0.0)?,
        });
    }
    Ok(CompositeProblem::new(objectives, vec![], inst.lower(), inst.upper(), x0)?)
}

/// The two scaled rows `±(f_p(x) − ν_p)/σ_p − ε ≤ 0` of constraint `p`.
pub fn constraint_rows(
    inst: &InverseOptValInstance,
    p: usize,
    cfg: &SmoothingConfig,
    lipschitz_l: f64,
) -> Result<[SharedFamily; 2], InstanceError> {
    let base: SharedFamily = pme(inst, p, cfg, lipschitz_l)?;
    let sigma = inst.sigma(p);
    let nu = inst.nu[p];
    let eps = inst.eps_feas;
    let above = ScaledFamily::new(base.clone(), 1.0 / sigma, -nu / sigma - eps)?;
    let below = ScaledFamily::new(base, -1.0 / sigma, nu / sigma - eps)?;
    Ok([Arc::new(above), Arc::new(below)])
}

fn check_margins(
    inst: &InverseOptValInstance,
    cfg: &SmoothingConfig,
    lipschitz: &[f64],
) -> Result<(), InstanceError> {
    for (j, &l) in lipschitz.iter().enumerate() {
        let p = inst.m1 + j;
        let tail = cfg.row_tail(l, inst.sigma(p));
        if !(inst.eps_feas > tail) {
            return Err(InstanceError::MarginEmpty {
                index: p,
                tail,
                eps: inst.eps_feas,
                required_k_tilde: cfg.required_k_tilde(l, inst.sigma(p), inst.eps_feas),
            });
        }
    }
    Ok(())
}

fn check_lipschitz_len(inst: &InverseOptValInstance, lipschitz: &[f64]) -> Result<(), InstanceError> {
    if lipschitz.len() != inst.m - inst.m1 {
        return Err(InstanceError::Invalid(format!(
            "{} Lipschitz bounds for {} constraints",
            lipschitz.len(),
            inst.m - inst.m1
        )));
    }
    Ok(())
}

/// Objectives `|ν_p − f_p|` for `p < m₁`, two scaled rows per constraint, started at `x0`.
pub fn constrained_problem(
    inst: &InverseOptValInstance,
    cfg: &SmoothingConfig,
    lipschitz: &[f64],
    x0: Vector,
) -> Result<CompositeProblem, InstanceError> {
    check_lipschitz_len(inst, lipschitz)?;
    let mut objectives = Vec::with_capacity(inst.m1);
    for p in 0..inst.m1 {
        objectives.push(Objective {
            phi: UnivariateConvex::abs_dev(inst.nu[p]),
            family: pme(inst, p, cfg, 0.0)?,
        });
    }
    let mut constraints = Vec::with_capacity(2 * (inst.m - inst.m1));
    for (j, &l) in lipschitz.iter().enumerate() {
        constraints.extend(constraint_rows(inst, inst.m1 + j, cfg, l)?);
    }
    Ok(CompositeProblem::new(objectives, constraints, inst.lower(), inst.upper(), x0)?)
}

/// `V(x) = Σ_{p ≥ m₁} max{0, |ν_p − f⁰_p(x)| − s_p}` with `s_p = (ε − tail_p)σ_p`.
#[derive(Debug, Clone)]
pub struct FeasibilityProblem {
    /// Built on dead zones shrunk by `FEAS_BUFFER·σ_p`.
    pub problem: CompositeProblem,
    pub s: Vec<f64>,
    pub cfg: SmoothingConfig,
}

/// Builds the feasibility phase from `start`; fails with `MarginEmpty` when some `s_p ≤ 0`.
pub fn feasibility_problem(
    inst: &InverseOptValInstance,
    cfg: &SmoothingConfig,
    lipschitz: &[f64],
    start: Vector,
) -> Result<FeasibilityProblem, InstanceError> {
    check_lipschitz_len(inst, lipschitz)?;
    check_margins(inst, cfg, lipschitz)?;
    let mut objectives = Vec::with_capacity(lipschitz.len());
    let mut s = Vec::with_capacity(lipschitz.len());
    for (j, &l) in lipschitz.iter().enumerate() {
        let p = inst.m1 + j;
        let sigma = inst.sigma(p);
        let s_p = (inst.eps_feas - cfg.row_tail(l, sigma)) * sigma;
        s.push(s_p);
        let tight = (s_p - FEAS_BUFFER * sigma).max(0.0);
        objectives.push(Objective {
            phi: UnivariateConvex::dead_zone(inst.nu[p], tight).map_err(ProxAdcError::from)?,
            family: Arc::new(FixedLevelFamily {
                inner: pme(inst, p, cfg, l)?,
                k0: 0,
            }),
        });
    }
    let problem = CompositeProblem::new(objectives, vec![], inst.lower(), inst.upper(), start)?;
    Ok(FeasibilityProblem {
        problem,
        s,
        cfg: *cfg,
    })
}

/// Doubles `k̃` from `cfg.k_tilde` until every constraint margin is nonempty.
pub fn resolve_k_tilde(
    inst: &InverseOptValInstance,
    cfg: &SmoothingConfig,
    lipschitz: &[f64],
    max_doublings: usize,
) -> Result<SmoothingConfig, InstanceError> {
    let mut cur = *cfg;
    for _ in 0..=max_doublings {
        match check_margins(inst, &cur, lipschitz) {
            Ok(()) => return Ok(cur),
            Err(InstanceError::MarginEmpty { .. }) => cur.k_tilde = cur.k_tilde.saturating_mul(2),
            Err(e) => return Err(e),
        }
    }
    check_margins(inst, &cur, lipschitz).map(|_| cur)
}

impl FeasibilityProblem {
    /// `V(x)` with the unshrunk dead zones.
    pub fn value(&self, inst: &InverseOptValInstance, x: &Vector) -> Result<f64, InstanceError> {
        let mut total = 0.0;
        for (j, obj) in self.problem.objectives.iter().enumerate() {
            let p = inst.m1 + j;
            let f0 = obj.family.eval(0, x)?.f;
            total += ((inst.nu[p] - f0).abs() - self.s[j]).max(0.0);
        }
        Ok(total)
    }
}

#[derive(Debug, Clone)]
pub struct FeasibilityOutcome {
    pub x0: Vector,
    /// `V(x0)` with the unshrunk dead zones.
    pub v: f64,
    pub iterations: usize,
    pub log: Vec<IterRecord>,
}

/// Runs inner iterations on the feasibility phase until the shrunk residual reaches `target`,
/// the iterates stop moving, or `max_inner` iterations are spent.
pub fn solve_feasibility(
    inst: &InverseOptValInstance,
    feas: &FeasibilityProblem,
    params: &ProxAdcParams,
    target: f64,
) -> Result<FeasibilityOutcome, InstanceError> {
    let clock = Instant::now();
    let mut x = feas.problem.x0.clone();
    let mut log = Vec::new();
    let mut v_tight = feas.problem.level_objective(0, &x)?;
    let mut iterations = 0;
    while v_tight > target && iterations < params.max_inner {
        iterations += 1;
        let step = inner_step(&feas.problem, params, 0, iterations - 1, iterations, &x, &clock)?;
        x = step.result.x_plus.clone();
        v_tight = step.record.objective_fk;
        let stuck = step.record.step_norm <= FEAS_STATIONARY_STEP;
        log.push(step.record);
        if stuck {
            break;
        }
    }
    Ok(FeasibilityOutcome {
        v: feas.value(inst, &x)?,
        x0: x,
        iterations,
        log,
    })
}
