//! End-to-end experiment drivers on generated instances: the unconstrained fit, and the
//! constrained fit preceded by a feasibility phase.

use crate::instances::{
    constrained_problem, constraint_rows, feasibility_problem, random_start, resolve_k_tilde, solve_feasibility, unconstrained_problem,
    FeasibilityOutcome, InstanceError, InverseOptValInstance, SmoothingConfig,
};
use crate::qp::Vector;
use crate::solver::{run_observed, IterRecord, ProxAdcParams, RunOutput, MARGIN_TOL};

#[derive(Debug, Clone, PartialEq)]
pub struct ProtocolConfig {
    pub smoothing: SmoothingConfig,
    pub params: ProxAdcParams,
    pub lipschitz_samples: usize,
    pub lipschitz_safety: f64,
    /// Doublings of `k̃` tried when a constraint margin is empty.
    pub max_k_tilde_doublings: usize,
    /// Feasibility residual (shrunk dead zones) at which the feasibility phase stops.
    pub feas_target: f64,
}

impl ProtocolConfig {
    /// `γ_k = 1/(k+1)^ρ`, `ε_k = δ_k = 1/(k+1)^ρ`, `λ = 5`, termination `(10⁻², 10⁻², 10)`.
    pub fn unconstrained(rho: f64) -> Self {
        Self {
            smoothing: SmoothingConfig::new(rho),
            params: ProxAdcParams::with_rho(rho),
            lipschitz_samples: 256,
            lipschitz_safety: 1.1,
            max_k_tilde_doublings: 20,
            feas_target: 1e-8,
        }
    }

    /// Same schedules with termination `(2·10⁻², 2·10⁻², 5)`.
    pub fn constrained(rho: f64) -> Self {
        let mut cfg = Self::unconstrained(rho);
        cfg.params.eta_bar = 2e-2;
        cfg.params.beta_bar = 2e-2;
        cfg.params.k_bar = 5;
        cfg
    }
}

/// Starting point used for an instance when none is given.
pub fn default_start(inst: &InverseOptValInstance) -> Vector {
    random_start(inst.seed, inst.n)
}

pub fn solve_unconstrained(
    inst: &InverseOptValInstance,
    cfg: &ProtocolConfig,
    x0: Vector,
    observer: &mut dyn FnMut(&IterRecord),
) -> Result<RunOutput, InstanceError> {
    let problem = unconstrained_problem(inst, &cfg.smoothing, x0)?;
    Ok(run_observed(&problem, &cfg.params, observer)?)
}

#[derive(Debug, Clone)]
pub struct ConstrainedOutcome {
    /// Schedule after `k̃` resolution.
    pub smoothing: SmoothingConfig,
    pub lipschitz: Vec<f64>,
    pub feasibility: FeasibilityOutcome,
    pub strictly_feasible: bool,
    /// `−tail(0) − f⁰(x0)` per constraint row.
    pub margins: Vec<f64>,
    /// Present when the feasibility phase produced a strictly feasible start.
    pub run: Option<RunOutput>,
}

impl ConstrainedOutcome {
    pub fn feasibility_ok(&self, v_tol: f64) -> bool {
        self.feasibility.v <= v_tol && self.strictly_feasible
    }
}

/// Resolves `k̃`, runs the feasibility phase from `start`, then solves the constrained fit from its output.
pub fn solve_constrained(
    inst: &InverseOptValInstance,
    cfg: &ProtocolConfig,
    start: Vector,
    observer: &mut dyn FnMut(&IterRecord),
) -> Result<ConstrainedOutcome, InstanceError> {
    let lipschitz = inst.constraint_lipschitz(cfg.lipschitz_samples, cfg.lipschitz_safety)?;
    let smoothing = resolve_k_tilde(inst, &cfg.smoothing, &lipschitz, cfg.max_k_tilde_doublings)?;
    let feas = feasibility_problem(inst, &smoothing, &lipschitz, start)?;
    let feasibility = solve_feasibility(inst, &feas, &cfg.params, cfg.feas_target)?;
    let (strictly_feasible, margins) = row_margins(inst, &smoothing, &lipschitz, &feasibility.x0)?;
    let run = if strictly_feasible {
        let problem = constrained_problem(inst, &smoothing, &lipschitz, feasibility.x0.clone())?;
        Some(run_observed(&problem, &cfg.params, observer)?)
    } else {
        None
    };
    Ok(ConstrainedOutcome {
        smoothing,
        lipschitz,
        feasibility,
        strictly_feasible,
        margins,
        run,
    })
}

/// Margins `−tail(0) − f⁰(x)` of every constraint row, and whether all are nonnegative within [`MARGIN_TOL`].
pub fn row_margins(
    inst: &InverseOptValInstance,
    smoothing: &SmoothingConfig,
    lipschitz: &[f64],
    x: &Vector,
) -> Result<(bool, Vec<f64>), InstanceError> {
    let mut margins = Vec::new();
    for (j, &l) in lipschitz.iter().enumerate() {
        for row in constraint_rows(inst, inst.m1 + j, smoothing, l)? {
            margins.push(-row.alpha_tail(0) - row.eval(0, x)?.f);
        }
    }
    let ok = margins.iter().all(|&m| m >= -MARGIN_TOL);
    Ok((ok, margins))
}
