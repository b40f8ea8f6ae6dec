//! Levenberg-Marquardt with trust-region damping and L-BFGS with Armijo
//! backtracking, both over caller-supplied callbacks.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum SolverError {
    #[error("invalid solver config: {0}")]
    InvalidConfig(String),
    #[error("objective is not finite at the initial point")]
    NonFiniteStart,
    #[error("residual has {rows} rows but the jacobian is {jr}×{jc} for {dim} variables")]
    Shape {
        rows: usize,
        jr: usize,
        jc: usize,
        dim: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LmConfig {
    pub lambda_init: f64,
    pub lambda_min: f64,
    pub lambda_max: f64,
    /// Damping scale factor applied on each accept (divide) or reject (multiply).
    pub gamma: f64,
    /// Smallest trust ratio accepted.
    pub rho_min: f64,
    /// Guard added to the predicted reduction.
    pub epsilon: f64,
    pub max_iters: usize,
    /// Position tolerance (m) used by pose problems.
    pub position_tol: f64,
    /// Orientation tolerance (rad) used by pose problems.
    pub orientation_tol: f64,
}

impl Default for LmConfig {
    fn default() -> Self {
        Self {
            lambda_init: 1e-3,
            lambda_min: 1e-9,
            lambda_max: 1e9,
            gamma: 4.0,
            rho_min: 1e-4,
            epsilon: 1e-300,
            max_iters: 100,
            position_tol: 1e-4,
            orientation_tol: 1e-3,
        }
    }
}

impl LmConfig {
    pub fn validate(&self) -> Result<(), SolverError> {
        let ok = self.lambda_min > 0.0
            && self.lambda_min <= self.lambda_init
            && self.lambda_init <= self.lambda_max
            && self.gamma > 1.0
            && self.epsilon >= 0.0
            && self.rho_min.is_finite();
        if ok {
            Ok(())
        } else {
            Err(SolverError::InvalidConfig(
                "need 0 < lambda_min ≤ lambda_init ≤ lambda_max and gamma > 1".into(),
            ))
        }
    }
}

/// Solver state at `q`: damping, residual jacobian, gradient `Jᵀr` and
/// error `½|r|²`.
#[derive(Debug, Clone, PartialEq)]
pub struct LmState {
    pub q: DVector<f64>,
    pub lambda: f64,
    pub residual: DVector<f64>,
    pub jacobian: DMatrix<f64>,
    pub gradient: DVector<f64>,
    pub error: f64,
}

fn evaluate<F>(q: &DVector<f64>, f: &F) -> Result<(DVector<f64>, DMatrix<f64>), SolverError>
where
    F: Fn(&DVector<f64>) -> (DVector<f64>, DMatrix<f64>),
{
    let (r, j) = f(q);
    if j.nrows() != r.len() || j.ncols() != q.len() {
        return Err(SolverError::Shape {
            rows: r.len(),
            jr: j.nrows(),
            jc: j.ncols(),
            dim: q.len(),
        });
    }
    Ok((r, j))
}

impl LmState {
    pub fn new<F>(q: DVector<f64>, f: &F, lambda: f64) -> Result<Self, SolverError>
    where
        F: Fn(&DVector<f64>) -> (DVector<f64>, DMatrix<f64>),
    {
        let (residual, jacobian) = evaluate(&q, f)?;
        let error = 0.5 * residual.norm_squared();
        if !error.is_finite() || jacobian.iter().any(|v| !v.is_finite()) {
            return Err(SolverError::NonFiniteStart);
        }
        let gradient = jacobian.transpose() * &residual;
        Ok(Self {
            q,
            lambda,
            residual,
            jacobian,
            gradient,
            error,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepOutcome {
    Accepted,
    Rejected,
    /// The damped system could not be factored; treated as a rejection.
    Singular,
}

/// One damped Gauss-Newton step. `project` maps the trial point back into
/// the feasible set before it is evaluated.
pub fn lm_step<F, P>(state: &LmState, f: &F, config: &LmConfig, project: P) -> (LmState, StepOutcome)
where
    F: Fn(&DVector<f64>) -> (DVector<f64>, DMatrix<f64>),
    P: Fn(&mut DVector<f64>),
{
    let n = state.q.len();
    let grow = |s: &LmState, outcome| {
        let mut next = s.clone();
        next.lambda = (s.lambda * config.gamma).min(config.lambda_max);
        (next, outcome)
    };
    let h = state.jacobian.transpose() * &state.jacobian;
    let a = h + DMatrix::identity(n, n) * state.lambda;
    let Some(chol) = a.cholesky() else {
        return grow(state, StepOutcome::Singular);
    };
    let delta = -chol.solve(&state.gradient);
    if delta.iter().any(|v| !v.is_finite()) {
        return grow(state, StepOutcome::Singular);
    }
    let mut q_new = &state.q + &delta;
    project(&mut q_new);
    let Ok((r_new, j_new)) = evaluate(&q_new, f) else {
        return grow(state, StepOutcome::Rejected);
    };
    let e_new = 0.5 * r_new.norm_squared();
    let rho_pred = 0.5 * delta.dot(&(state.lambda * &delta - &state.gradient));
    let rho_trust = (state.error - e_new) / (rho_pred + config.epsilon);
    if e_new.is_finite() && e_new < state.error && rho_trust >= config.rho_min {
        let gradient = j_new.transpose() * &r_new;
        let next = LmState {
            q: q_new,
            lambda: (state.lambda / config.gamma).max(config.lambda_min),
            residual: r_new,
            jacobian: j_new,
            gradient,
            error: e_new,
        };
        (next, StepOutcome::Accepted)
    } else {
        grow(state, StepOutcome::Rejected)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LmReport {
    pub state: LmState,
    pub iterations: usize,
    pub converged: bool,
}

/// Iterates [`lm_step`] until `done(state)` after an update, the step budget
/// runs out, or damping saturates at `lambda_max` with a rejection.
pub fn lm_solve<F, P, D>(
    q0: DVector<f64>,
    f: &F,
    config: &LmConfig,
    project: P,
    done: D,
) -> Result<LmReport, SolverError>
where
    F: Fn(&DVector<f64>) -> (DVector<f64>, DMatrix<f64>),
    P: Fn(&mut DVector<f64>),
    D: Fn(&LmState) -> bool,
{
    config.validate()?;
    let mut state = LmState::new(q0, f, config.lambda_init)?;
    if done(&state) {
        return Ok(LmReport {
            state,
            iterations: 0,
            converged: true,
        });
    }
    for it in 1..=config.max_iters {
        let (next, outcome) = lm_step(&state, f, config, &project);
        let saturated = outcome != StepOutcome::Accepted && state.lambda >= config.lambda_max;
        state = next;
        if done(&state) {
            return Ok(LmReport {
                state,
                iterations: it,
                converged: true,
            });
        }
        if saturated {
            return Ok(LmReport {
                state,
                iterations: it,
                converged: false,
            });
        }
    }
    Ok(LmReport {
        state,
        iterations: config.max_iters,
        converged: false,
    })
}

/// Independent LM problems from several seeds, solved in parallel; results
/// keep the seed order.
pub fn lm_solve_batch<F, P, D>(
    seeds: &[DVector<f64>],
    f: &F,
    config: &LmConfig,
    project: P,
    done: D,
) -> Vec<Result<LmReport, SolverError>>
where
    F: Fn(&DVector<f64>) -> (DVector<f64>, DMatrix<f64>) + Sync,
    P: Fn(&mut DVector<f64>) + Sync,
    D: Fn(&LmState) -> bool + Sync,
{
    seeds
        .par_iter()
        .map(|q| lm_solve(q.clone(), f, config, &project, &done))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LbfgsConfig {
    /// Number of stored curvature pairs; 0 gives gradient descent.
    pub history: usize,
    pub max_iters: usize,
    /// Armijo sufficient-decrease constant.
    pub c1: f64,
    /// Step shrink factor per backtrack.
    pub shrink: f64,
    pub max_backtracks: usize,
    /// Stop when `|∇f|_∞` falls below this.
    pub grad_tol: f64,
}

impl Default for LbfgsConfig {
    fn default() -> Self {
        Self {
            history: 10,
            max_iters: 200,
            c1: 1e-4,
            shrink: 0.5,
            max_backtracks: 40,
            grad_tol: 1e-8,
        }
    }
}

impl LbfgsConfig {
    pub fn validate(&self) -> Result<(), SolverError> {
        let ok = self.c1 > 0.0 && self.c1 < 1.0 && self.shrink > 0.0 && self.shrink < 1.0 && self.grad_tol >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(SolverError::InvalidConfig("need 0 < c1 < 1, 0 < shrink < 1, grad_tol ≥ 0".into()))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LbfgsResult {
    pub q: DVector<f64>,
    pub value: f64,
    pub gradient: DVector<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Objective value after each accepted iteration, starting with `f(q0)`.
    pub trace: Vec<f64>,
}

fn two_loop(g: &DVector<f64>, pairs: &[(DVector<f64>, DVector<f64>, f64)]) -> DVector<f64> {
    let mut q = g.clone();
    let mut alpha = vec![0.0; pairs.len()];
    for (i, (s, y, rho)) in pairs.iter().enumerate().rev() {
        alpha[i] = rho * s.dot(&q);
        q -= alpha[i] * y;
    }
    if let Some((s, y, _)) = pairs.last() {
        q *= s.dot(y) / y.dot(y);
    }
    for (i, (s, y, rho)) in pairs.iter().enumerate() {
        let beta = rho * y.dot(&q);
        q += (alpha[i] - beta) * s;
    }
    -q
}

/// Minimizes `objective` (returning value and gradient) from `q0`.
pub fn lbfgs_minimize<F>(objective: &F, q0: DVector<f64>, config: &LbfgsConfig) -> Result<LbfgsResult, SolverError>
where
    F: Fn(&DVector<f64>) -> (f64, DVector<f64>),
{
    config.validate()?;
    let (mut f, mut g) = objective(&q0);
    if !f.is_finite() || g.len() != q0.len() || g.iter().any(|v| !v.is_finite()) {
        return Err(SolverError::NonFiniteStart);
    }
    let mut q = q0;
    let mut pairs: Vec<(DVector<f64>, DVector<f64>, f64)> = Vec::new();
    let mut trace = vec![f];
    let mut iterations = 0;
    let stationary = |g: &DVector<f64>| g.amax() < config.grad_tol;
    while iterations < config.max_iters && !stationary(&g) {
        let mut accepted = None;
        // retry once along the steepest descent after a failed quasi-Newton search
        for attempt in 0..2 {
            let mut d = if attempt == 0 { two_loop(&g, &pairs) } else { -g.clone() };
            let mut slope = g.dot(&d);
            if !(slope < 0.0) {
                d = -g.clone();
                slope = -g.norm_squared();
            }
            let mut t = 1.0;
            for _ in 0..=config.max_backtracks {
                let trial = &q + t * &d;
                let (ft, gt) = objective(&trial);
                if ft.is_finite() && gt.iter().all(|v| v.is_finite()) && ft <= f + config.c1 * t * slope && ft <= f {
                    accepted = Some((trial, ft, gt));
                    break;
                }
                t *= config.shrink;
            }
            if accepted.is_some() || pairs.is_empty() {
                break;
            }
            pairs.clear();
        }
        let Some((q_new, f_new, g_new)) = accepted else {
            break;
        };
        let s = &q_new - &q;
        let y = &g_new - &g;
        let sy = s.dot(&y);
        if config.history > 0 && sy > 1e-12 * s.norm() * y.norm() && sy.is_finite() {
            if pairs.len() == config.history {
                pairs.remove(0);
            }
            pairs.push((s, y, 1.0 / sy));
        } else {
            // stale curvature would keep steering along a bad direction
            pairs.clear();
        }
        q = q_new;
        f = f_new;
        g = g_new;
        iterations += 1;
        trace.push(f);
    }
    Ok(LbfgsResult {
        converged: stationary(&g),
        q,
        value: f,
        gradient: g,
        iterations,
        trace,
    })
}

/// Independent L-BFGS problems from several seeds, solved in parallel;
/// results keep the seed order.
pub fn lbfgs_minimize_batch<F>(
    objective: &F,
    seeds: &[DVector<f64>],
    config: &LbfgsConfig,
) -> Vec<Result<LbfgsResult, SolverError>>
where
    F: Fn(&DVector<f64>) -> (f64, DVector<f64>) + Sync,
{
    seeds
        .par_iter()
        .map(|q| lbfgs_minimize(objective, q.clone(), config))
        .collect()
}
